"""Affine/ReLU embedding networks with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, NumericError, ShapeError, UsageError

ACTIVATIONS = ("identity", "relu")


@dataclass
class EmbeddingModel:
    """Stack of affine layers ``h <- act(h @ W.T + b)``; ``W`` has shape (out, in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    seed: int | None = None

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations) >= 1):
            raise ShapeError("weights, biases and activations must have the same nonzero length")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        prev = None
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if prev is not None and w.shape[1] != prev:
                raise ShapeError(f"layer {i} expects {w.shape[1]} inputs, previous layer gives {prev}")
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
            prev = w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved, layer by layer. Arrays are live views."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.seed,
        )

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [tuple(w.shape) for w in self.weights]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    squeeze: bool


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_gradient: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_model(
    input_dim: int,
    embed_dim: int = 64,
    hidden: tuple[int, ...] | list[int] = (),
    activation: str = "relu",
    seed: int = 0,
) -> EmbeddingModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    Hidden layers use ``activation``; the output layer is always affine.
    """
    sizes = [input_dim, *hidden, embed_dim]
    if len(sizes) > 4:
        raise ConfigError("at most 3 layers are supported")
    if any(int(s) < 1 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        s = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append("identity" if i == len(sizes) - 2 else activation)
    return EmbeddingModel(weights, biases, acts, seed)


def embed_forward(model: EmbeddingModel, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Embed one vector (D,) or a batch (B, D). Returns the output and the backward cache."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise ShapeError(f"input of shape {x.shape} does not match input dim {model.input_dim}")
    inputs, preacts = [], []
    with np.errstate(over="ignore", invalid="ignore"):  # reported below as NumericError
        for w, b, act in zip(model.weights, model.biases, model.activations):
            inputs.append(h)
            z = h @ w.T + b
            preacts.append(z)
            h = np.maximum(z, 0.0) if act == "relu" else z
    if not np.all(np.isfinite(h)):
        raise NumericError("embedding contains non-finite values")
    return (h[0] if squeeze else h), ForwardCache(inputs, preacts, squeeze)


def embed(model: EmbeddingModel, x: np.ndarray) -> np.ndarray:
    return embed_forward(model, x)[0]


def embed_backward(model: EmbeddingModel, cache: ForwardCache | None, grad_out: np.ndarray) -> GradientBundle:
    """Vector-Jacobian product of the forward pass; batch gradients are summed."""
    if cache is None:
        raise UsageError("embed_backward needs the cache returned by embed_forward")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ShapeError(f"gradient shape {g.shape} does not match output {cache.preacts[-1].shape}")
    n = len(model.weights)
    dws, dbs = [None] * n, [None] * n
    for i in reversed(range(n)):
        if model.activations[i] == "relu":
            g = g * (cache.preacts[i] > 0)
        dws[i] = g.T @ cache.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ model.weights[i]
    return GradientBundle(dws, dbs, g[0] if cache.squeeze else g)


def squared_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    diff = a - b
    return float(diff @ diff)


def pairwise_squared_distances(a: np.ndarray, b: np.ndarray | None = None, chunk: int = 256) -> np.ndarray:
    """Squared distances by explicit differences (no norm expansion, so exact zeros stay zero)."""
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        out[start:start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def rescale_to_norm(vectors: np.ndarray, target_norm: float = 1.0) -> np.ndarray:
    """Scale every row (or a single vector) to Euclidean norm ``target_norm``."""
    if not target_norm > 0:
        raise ConfigError("target_norm must be positive")
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot rescale a zero vector")
    return v * (target_norm / norms)


def normalize_forward(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; returns (unit vectors, norms with a kept axis)."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norms, norms


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    # d(v/|v|) = (I - u u^T) / |v|
    radial = np.sum(grad_unit * unit, axis=-1, keepdims=True)
    return (grad_unit - radial * unit) / norms
