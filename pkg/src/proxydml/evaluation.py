"""Zero-shot retrieval and clustering metrics: Recall@K, k-means and NMI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import pairwise_squared_distances
from .errors import ConfigError, UsageError


@dataclass
class RetrievalResult:
    recall_at: dict[int, float]
    num_queries: int


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    nmi: float
    kmeans_inertia: float


def recall_at_k(embeddings, labels, ks=(1, 2, 4, 8)) -> RetrievalResult:
    """Fraction of queries with a same-class point among their k nearest neighbours.

    Each point queries all other points; distance ties are broken by index.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = emb.shape[0]
    ks = sorted({int(k) for k in ks})
    if n < 2:
        raise ConfigError("recall needs at least two points")
    if not ks or ks[0] < 1 or ks[-1] > n - 1:
        raise ConfigError(f"every k must lie in [1, {n - 1}] for {n} points, got {ks}")
    dist = pairwise_squared_distances(emb)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, : ks[-1]]
    hit = labels[order] == labels[:, None]
    # position of the first same-class neighbour (ks[-1] if none within reach)
    first_hit = np.where(hit.any(axis=1), hit.argmax(axis=1), ks[-1])
    return RetrievalResult({k: float(np.mean(first_hit < k)) for k in ks}, n)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:  # duplicates exhausted the distinct points
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def kmeans(embeddings, k: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Empty clusters are re-seeded at the point currently farthest from its
    centroid. Stops when assignments no longer change.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ConfigError("k must be at least 1")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of points {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    assign = None
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        dist = pairwise_squared_distances(x, centroids)
        new_assign = dist.argmin(axis=1)
        history.append(float(dist[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            residual = np.sum((x - centroids[assign]) ** 2, axis=1)
            for c in np.nonzero(~filled)[0]:
                far = int(np.argmax(residual))
                centroids[c] = x[far]
                residual[far] = -1.0
    dist = pairwise_squared_distances(x, centroids)
    assign = dist.argmin(axis=1)
    inertia = float(dist[np.arange(n), assign].sum())
    return KMeansResult(assign, centroids, inertia, history, it)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(assignments, labels) -> float:
    """``2 I(A; C) / (H(A) + H(C))`` in nats; 1.0 when both partitions are trivial."""
    a = np.asarray(assignments)
    c = np.asarray(labels)
    if a.shape != c.shape or a.ndim != 1:
        raise UsageError(f"assignments {a.shape} and labels {c.shape} must be equal-length vectors")
    n = a.size
    if n == 0:
        raise UsageError("cannot score an empty clustering")
    _, ai = np.unique(a, return_inverse=True)
    _, ci = np.unique(c, return_inverse=True)
    table = np.zeros((ai.max() + 1, ci.max() + 1))
    np.add.at(table, (ai, ci), 1.0)
    h_a = _entropy(table.sum(axis=1), n)
    h_c = _entropy(table.sum(axis=0), n)
    if h_a + h_c == 0.0:
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / (n * n)
    mi = float(np.sum(pij * np.log(pij / outer)))
    return float(np.clip(2.0 * mi / (h_a + h_c), 0.0, 1.0))


def cluster_quality(embeddings, labels, k: int | None = None, seed: int = 0, max_iters: int = 100) -> ClusteringResult:
    """k-means with ``k`` = number of ground-truth classes unless given, scored by NMI."""
    labels = np.asarray(labels)
    if k is None:
        k = len(np.unique(labels))
    km = kmeans(embeddings, k, seed=seed, max_iters=max_iters)
    return ClusteringResult(km.assignments, nmi(km.assignments, labels), km.inertia)
