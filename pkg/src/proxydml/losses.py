"""Ranking, NCA and margin-triplet losses with analytic gradients.

All distances are squared Euclidean. Single-instance losses return a
:class:`LossOutput` whose gradients are taken with respect to the anchor, the
positive and every negative, so they apply equally to data points and to
proxies. Batch losses return gradients for every row of the batch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .embedding import pairwise_squared_distances
from .errors import ShapeError, UsageError


@dataclass
class LossOutput:
    value: float
    grad_anchor: np.ndarray
    grad_positive: np.ndarray
    grad_negatives: np.ndarray  # (num_negatives, dim)


@dataclass
class BatchLossOutput:
    value: float
    grad_embeddings: np.ndarray  # (batch, dim)
    num_triplets: int
    degenerate: bool = False  # no valid triplet could be formed


def ranking_loss(d_xy: float, d_xz: float) -> int:
    """Heaviside of ``d_xy - d_xz`` with H(0) = 0, so ties satisfy the constraint."""
    return int(d_xy > d_xz)


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def nca_from_distances(d_pos: np.ndarray, d_neg: np.ndarray) -> np.ndarray:
    """``d_pos + log sum_z exp(-d_neg)``, vectorised over leading axes.

    The denominator runs over negatives only, so the value can be negative.
    """
    return np.asarray(d_pos, dtype=np.float64) + logsumexp(-np.asarray(d_neg, dtype=np.float64), axis=-1)


def _check(anchor, positive, negatives):
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if positive.shape != anchor.shape or negatives.shape[1:] != anchor.shape:
        raise ShapeError("anchor, positive and negatives must share one dimension")
    return anchor, positive, negatives


def nca_loss(anchor, positive, negatives) -> LossOutput:
    anchor = np.asarray(anchor, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.size == 0:
        raise UsageError("NCA loss needs at least one negative")
    anchor, positive, negatives = _check(anchor, positive, negatives)
    diff_p = anchor - positive
    diff_n = anchor - negatives
    d_p = diff_p @ diff_p
    d_n = np.einsum("ij,ij->i", diff_n, diff_n)
    value = float(nca_from_distances(d_p, d_n))
    w = np.exp(-d_n - logsumexp(-d_n))  # softmax over negatives
    grad_neg = 2.0 * w[:, None] * diff_n
    return LossOutput(
        value=value,
        grad_anchor=2.0 * diff_p - grad_neg.sum(axis=0),
        grad_positive=-2.0 * diff_p,
        grad_negatives=grad_neg,
    )


def proxy_nca_loss(anchor, positive_proxy, negative_proxies) -> LossOutput:
    """NCA against proxies. Same numbers as :func:`nca_loss`; the caller routes
    ``grad_positive``/``grad_negatives`` into the proxy matrix."""
    return nca_loss(anchor, positive_proxy, negative_proxies)


def triplet_hinge_loss(anchor, positive, negative, margin: float) -> LossOutput:
    if margin < 0 or not np.isfinite(margin):
        raise ValueError("margin must be finite and nonnegative")
    anchor, positive, negatives = _check(anchor, positive, negative)
    negative = negatives[0]
    diff_p = anchor - positive
    diff_n = anchor - negative
    t = diff_p @ diff_p + margin - diff_n @ diff_n
    zero = np.zeros_like(anchor)
    if t <= 0.0:
        # inactive hinge, and the zero subgradient at the kink
        return LossOutput(0.0, zero, zero.copy(), zero[None, :].copy())
    return LossOutput(
        value=float(t),
        grad_anchor=2.0 * (negative - positive),
        grad_positive=-2.0 * diff_p,
        grad_negatives=(2.0 * diff_n)[None, :],
    )


def proxy_triplet_loss(anchor, positive_proxy, negative_proxy, margin: float) -> LossOutput:
    return triplet_hinge_loss(anchor, positive_proxy, negative_proxy, margin)


def _pair_indices(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return np.nonzero(same)


def _grad_from_distance_grad(emb: np.ndarray, g: np.ndarray) -> np.ndarray:
    # D_ij = |e_i - e_j|^2  =>  dL/de = 2 (diag(S 1) - S) e with S = G + G^T
    s = g + g.T
    return 2.0 * (s.sum(axis=1)[:, None] * emb - s @ emb)


def semihard_triplet_batch_loss(embeddings, labels, margin: float) -> BatchLossOutput:
    """In-batch semi-hard mining, averaged over every ordered anchor-positive pair.

    For each pair the negative is the closest one that is still farther than
    the positive; when every negative is closer than the positive, the
    farthest negative (least violating) is used instead.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    dist = pairwise_squared_distances(emb)
    a_idx, p_idx = _pair_indices(labels)
    has_negative = len(np.unique(labels)) >= 2
    if a_idx.size == 0 or not has_negative:
        warnings.warn("batch has no anchor-positive pair with a negative; loss set to 0", RuntimeWarning)
        return BatchLossOutput(0.0, np.zeros_like(emb), 0, degenerate=True)

    d_ap = dist[a_idx, p_idx]
    d_an = dist[a_idx]
    neg = labels[a_idx][:, None] != labels[None, :]
    semihard = neg & (d_an > d_ap[:, None])
    first = np.where(semihard, d_an, np.inf).argmin(axis=1)
    fallback = np.where(neg, d_an, -np.inf).argmax(axis=1)
    n_idx = np.where(semihard.any(axis=1), first, fallback)

    hinge = d_ap + margin - dist[a_idx, n_idx]
    active = hinge > 0.0
    k = a_idx.size
    value = float(np.sum(np.where(active, hinge, 0.0))) / k

    g = np.zeros_like(dist)
    np.add.at(g, (a_idx[active], p_idx[active]), 1.0 / k)
    np.add.at(g, (a_idx[active], n_idx[active]), -1.0 / k)
    return BatchLossOutput(value, _grad_from_distance_grad(emb, g), int(k))


def nca_batch_loss(embeddings, labels) -> BatchLossOutput:
    """NCA over in-batch points: every ordered same-class pair against all
    other-class points of the batch, averaged over pairs."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    dist = pairwise_squared_distances(emb)
    a_idx, p_idx = _pair_indices(labels)
    if a_idx.size == 0 or len(np.unique(labels)) < 2:
        warnings.warn("batch has no anchor-positive pair with a negative; loss set to 0", RuntimeWarning)
        return BatchLossOutput(0.0, np.zeros_like(emb), 0, degenerate=True)

    neg = labels[a_idx][:, None] != labels[None, :]
    logits = np.where(neg, -dist[a_idx], -np.inf)
    lse = logsumexp(logits, axis=1)
    values = dist[a_idx, p_idx] + lse
    k = a_idx.size
    w = np.where(neg, np.exp(logits - lse[:, None]), 0.0)

    g = np.zeros_like(dist)
    np.add.at(g, (a_idx, p_idx), 1.0 / k)
    np.add.at(g, (np.repeat(a_idx, emb.shape[0]), np.tile(np.arange(emb.shape[0]), k)), -w.ravel() / k)
    return BatchLossOutput(float(values.mean()), _grad_from_distance_grad(emb, g), int(k))
