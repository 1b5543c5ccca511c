"""Learnable proxy vectors and the rules that assign points to them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .embedding import pairwise_squared_distances
from .errors import ConfigError, ShapeError, UnknownLabelError

MODES = ("static", "dynamic")


@dataclass
class ProxySet:
    vectors: np.ndarray  # (num_proxies, embed_dim)
    mode: str = "static"
    label_to_proxy: np.ndarray | None = None  # label -> proxy index
    proxy_per_class_ratio: float = 1.0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ConfigError("a proxy set needs at least two proxies")
        if self.mode not in MODES:
            raise ConfigError(f"unknown assignment mode {self.mode!r}")
        if self.label_to_proxy is not None:
            self.label_to_proxy = np.asarray(self.label_to_proxy, dtype=np.int64)
            if self.label_to_proxy.size and (
                self.label_to_proxy.min() < 0 or self.label_to_proxy.max() >= len(self)
            ):
                raise ConfigError("label_to_proxy points outside the proxy matrix")
        if self.mode == "static" and self.label_to_proxy is None:
            raise ConfigError("static assignment requires a label_to_proxy map")
        if not self.proxy_per_class_ratio > 0:
            raise ConfigError("proxy_per_class_ratio must be positive")
        if not np.all(np.isfinite(self.vectors)):
            raise ConfigError("proxy vectors must be finite")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "ProxySet":
        return ProxySet(
            self.vectors.copy(),
            self.mode,
            None if self.label_to_proxy is None else self.label_to_proxy.copy(),
            self.proxy_per_class_ratio,
        )

    def assign(self, embeddings: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
        """Proxy index for each row, by label (static) or by nearest proxy (dynamic)."""
        if self.mode == "static":
            if labels is None:
                raise ConfigError("static assignment needs labels")
            return np.array([assign_static(self, int(c)) for c in labels], dtype=np.int64)
        return assign_dynamic_batch(embeddings, self.vectors)


@dataclass(frozen=True)
class ApproxError:
    epsilon: float
    argmax_point_index: int
    squared: bool = True


def proxy_count(num_labels: int, ratio: float) -> int:
    # round first: 10 * 0.3 is 3.0000000000000004 in binary floating point
    return max(2, math.ceil(round(num_labels * ratio, 9)))


def init_proxies(
    num_proxies: int,
    embed_dim: int,
    seed: int = 0,
    scale: float | None = None,
    mode: str = "static",
    label_to_proxy: np.ndarray | None = None,
    ratio: float = 1.0,
) -> ProxySet:
    """Proxies with i.i.d. Uniform(-scale, scale) entries; scale defaults to 1/sqrt(embed_dim)."""
    if num_proxies < 2:
        raise ConfigError(f"need at least 2 proxies, got {num_proxies}")
    if scale is None:
        scale = 1.0 / math.sqrt(embed_dim)
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-scale, scale, size=(num_proxies, embed_dim))
    if mode == "static" and label_to_proxy is None:
        label_to_proxy = np.arange(num_proxies)
    return ProxySet(vectors, mode, label_to_proxy, ratio)


def assign_static(proxies: ProxySet, label: int) -> int:
    if proxies.label_to_proxy is None:
        raise UnknownLabelError("proxy set has no label map")
    if not 0 <= label < proxies.label_to_proxy.size:
        raise UnknownLabelError(label)
    return int(proxies.label_to_proxy[label])


def assign_dynamic(x: np.ndarray, vectors: np.ndarray) -> int:
    """Index of the nearest proxy under squared distance; ties go to the lowest index."""
    vectors = np.asarray(vectors, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ConfigError("need a nonempty proxy matrix")
    if x.shape != vectors.shape[1:]:
        raise ShapeError(f"point of shape {x.shape} vs proxies of dim {vectors.shape[1]}")
    diff = vectors - x
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def assign_dynamic_batch(points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    return pairwise_squared_distances(points, vectors).argmin(axis=1)


def fractional_preassign(num_labels: int, ratio: float, seed: int = 0) -> np.ndarray:
    """Random label -> proxy map using ``max(2, ceil(num_labels * ratio))`` proxies.

    Labels are shuffled and dealt round-robin, so per-proxy label counts differ
    by at most one. With ``ratio >= 1`` the map is injective.
    """
    if not ratio > 0:
        raise ConfigError(f"ratio must be positive, got {ratio}")
    if num_labels < 1:
        raise ConfigError("need at least one label")
    raw = math.ceil(round(num_labels * ratio, 9))
    n_proxies = proxy_count(num_labels, ratio)
    if raw < 2:
        warnings.warn(f"ratio {ratio} gives {raw} proxies for {num_labels} labels; using 2", UserWarning)
    order = np.random.default_rng(seed).permutation(num_labels)
    mapping = np.empty(num_labels, dtype=np.int64)
    mapping[order] = np.arange(num_labels) % n_proxies
    return mapping


def proxy_approx_error(embeddings: np.ndarray, vectors: np.ndarray, squared: bool = True) -> ApproxError:
    """Worst distance from any point to its nearest proxy."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[0] == 0:
        raise ConfigError("need at least one embedding")
    nearest = pairwise_squared_distances(embeddings, vectors).min(axis=1)
    i = int(np.argmax(nearest))
    eps = float(nearest[i])
    return ApproxError(eps if squared else math.sqrt(eps), i, squared)
