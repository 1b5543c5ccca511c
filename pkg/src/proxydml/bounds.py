"""Numerical checks of the proxy upper bounds.

Conventions
-----------
* Ordinal-preservation and ranking-expectation checks use plain Euclidean
  distance; the triangle-inequality argument behind them needs a metric.
  ``epsilon`` there is the largest Euclidean point-to-proxy distance.
* The NCA and margin-triplet bounds compare a loss on unit-normalized data
  points against the same loss on unnormalized points and proxies with
  constant norms ``N_x``, ``N_p`` and ``alpha = 1 / (N_x N_p)``. ``epsilon``
  is the largest *squared* distance between a unit-normalized point and its
  unit-normalized proxy, so ``|x_hat - p_hat| <= sqrt(epsilon)``.
  Inside these losses the distance is ``distance_scale * |a - b|^2`` with
  ``distance_scale = 0.5`` by default: under that scaling the dot-product
  algebra closes with the stated constants. With ``distance_scale = 1`` the
  approximation term doubles and the stated constants no longer hold in
  general.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding import normalize_forward, pairwise_squared_distances
from .errors import ConfigError, DegenerateInputError
from .losses import nca_from_distances

SLACK_TOL = 1e-9
NORM_TOL = 1e-6


@dataclass
class BoundReport:
    bound_name: str
    samples_checked: int
    violations: int
    max_slack: float  # worst case over samples: min(RHS - LHS)
    mean_slack: float
    epsilon_used: float
    alpha_used: float
    norm_stats: dict
    precondition_failures: int = 0
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


@dataclass
class NormalizedConfig:
    unit_embeddings: np.ndarray
    unit_proxies: np.ndarray
    N_x: float
    N_p: float
    embedding_norms: np.ndarray
    proxy_norms: np.ndarray

    @property
    def alpha(self) -> float:
        return 1.0 / (self.N_x * self.N_p)

    def norm_stats(self) -> dict:
        return {
            "embedding": (float(self.embedding_norms.mean()), float(self.embedding_norms.std())),
            "proxy": (float(self.proxy_norms.mean()), float(self.proxy_norms.std())),
        }

    def constant_norms(self, tol: float = NORM_TOL) -> bool:
        return _relative_spread(self.embedding_norms) < tol and _relative_spread(self.proxy_norms) < tol

    def rescaled(self, N_x: float | None = None, N_p: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Points at norm ``N_x`` and proxies at norm ``N_p`` (default: the recorded means)."""
        return (self.N_x if N_x is None else N_x) * self.unit_embeddings, \
            (self.N_p if N_p is None else N_p) * self.unit_proxies


def _relative_spread(norms: np.ndarray) -> float:
    return float(norms.std() / norms.mean())


def normalize_config(embeddings, proxies) -> NormalizedConfig:
    """Project points and proxies onto the unit sphere, keeping their mean norms."""
    try:
        ux, nx = normalize_forward(np.atleast_2d(embeddings))
        up, np_ = normalize_forward(np.atleast_2d(proxies))
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"normalize_config: {exc}") from None
    nx, np_ = nx[:, 0], np_[:, 0]
    return NormalizedConfig(ux, up, float(nx.mean()), float(np_.mean()), nx, np_)


def _raw_norms(x: np.ndarray, p: np.ndarray) -> tuple[float, dict]:
    """alpha and norm statistics without normalizing (zero vectors allowed)."""
    nx, np_ = np.linalg.norm(x, axis=1), np.linalg.norm(p, axis=1)
    prod = float(nx.mean() * np_.mean())
    stats = {"embedding": (float(nx.mean()), float(nx.std())), "proxy": (float(np_.mean()), float(np_.std()))}
    return (1.0 / prod if prod > 0 else math.inf), stats


def _rowdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.einsum("...k,...k->...", diff, diff)


def _slack_summary(slack: np.ndarray) -> tuple[float, float]:
    if slack.size == 0:
        return 0.0, 0.0
    return float(slack.min()), float(slack.mean())


def _assignment(x: np.ndarray, p: np.ndarray, assign) -> np.ndarray:
    if assign is None:
        return pairwise_squared_distances(x, p).argmin(axis=1)
    assign = np.asarray(assign, dtype=np.int64)
    if assign.shape != (x.shape[0],):
        raise ConfigError("assignment must give one proxy per point")
    return assign


def _triplets(triplets) -> np.ndarray:
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    return t


# ---------------------------------------------------------------- Euclidean


def verify_ordinal_preservation(embeddings, proxies, triplets, assign=None) -> BoundReport:
    """``|(d(x,y) - d(x,z)) - (d(x,p_y) - d(x,p_z))| <= 2 eps`` with Euclidean d.

    Also checks the consequence: when ``|d(x,p_y) - d(x,p_z)| > 2 eps`` the
    data triplet and the proxy triplet order the same way.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    p = np.atleast_2d(np.asarray(proxies, dtype=np.float64))
    assign = _assignment(x, p, assign)
    eps = float(np.sqrt(_rowdist(x, p[assign]).max()))
    t = _triplets(triplets)
    a, y, z = x[t[:, 0]], x[t[:, 1]], x[t[:, 2]]
    py, pz = p[assign[t[:, 1]]], p[assign[t[:, 2]]]
    d_xy, d_xz = np.sqrt(_rowdist(a, y)), np.sqrt(_rowdist(a, z))
    d_py, d_pz = np.sqrt(_rowdist(a, py)), np.sqrt(_rowdist(a, pz))
    gap = np.abs((d_xy - d_xz) - (d_py - d_pz))
    slack = 2 * eps - gap
    shown = slack < -SLACK_TOL
    decisive = np.abs(d_py - d_pz) > 2 * eps
    flipped = decisive & (np.sign(d_xy - d_xz) != np.sign(d_py - d_pz))
    lo, mean = _slack_summary(slack)
    alpha, stats = _raw_norms(x, p)
    return BoundReport(
        "ordinal_preservation", int(t.shape[0]), int(np.sum(shown | flipped)), lo, mean, eps, alpha, stats,
        details={
            "distance": "euclidean",
            "inequality_violations": int(shown.sum()),
            "order_checked": int(decisive.sum()),
            "order_flips": int(flipped.sum()),
        },
    )


def verify_ranking_expectation_bound(embeddings, proxies, triplets, assign=None) -> BoundReport:
    """``E[L_rank(x;y,z)] <= E[L_rank(x;p_y,p_z)] + Pr[|d(x,p_y) - d(x,p_z)| <= 2 eps]``.

    Checked pointwise per triplet (which implies the expectation form) and on
    the empirical means of the same sample.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    p = np.atleast_2d(np.asarray(proxies, dtype=np.float64))
    assign = _assignment(x, p, assign)
    eps = float(np.sqrt(_rowdist(x, p[assign]).max()))
    t = _triplets(triplets)
    a = x[t[:, 0]]
    d_xy, d_xz = np.sqrt(_rowdist(a, x[t[:, 1]])), np.sqrt(_rowdist(a, x[t[:, 2]]))
    d_py = np.sqrt(_rowdist(a, p[assign[t[:, 1]]]))
    d_pz = np.sqrt(_rowdist(a, p[assign[t[:, 2]]]))
    rank = (d_xy > d_xz).astype(float)
    rank_p = (d_py > d_pz).astype(float)
    close = (np.abs(d_py - d_pz) <= 2 * eps).astype(float)
    pointwise = rank_p + close - rank
    lhs, rhs = float(rank.mean()) if t.size else 0.0, float((rank_p + close).mean()) if t.size else 0.0
    alpha, stats = _raw_norms(x, p)
    return BoundReport(
        "ranking_expectation", int(t.shape[0]), int(np.sum(pointwise < -SLACK_TOL)),
        float(pointwise.min()) if t.size else 0.0, rhs - lhs, eps, alpha, stats,
        details={
            "distance": "euclidean",
            "expected_ranking_loss": lhs,
            "expected_proxy_ranking_loss": float(rank_p.mean()) if t.size else 0.0,
            "prob_within_2eps": float(close.mean()) if t.size else 0.0,
            "expectation_holds": bool(lhs <= rhs + SLACK_TOL),
        },
    )


# ---------------------------------------------------------- constant norm


def _norm_preconditions(cfg: NormalizedConfig, tol: float) -> dict:
    return {
        "constant_norms": bool(cfg.constant_norms(tol)),
        "alpha_le_one": bool(cfg.alpha <= 1.0 + 1e-12),
        "anchor_norm_gt_one": bool(cfg.N_x > 1.0),
        "embedding_norm_spread": _relative_spread(cfg.embedding_norms),
        "proxy_norm_spread": _relative_spread(cfg.proxy_norms),
    }


def _unit_epsilon(cfg: NormalizedConfig, assign) -> tuple[float, np.ndarray]:
    assign = _assignment(cfg.unit_embeddings, cfg.unit_proxies, assign)
    eps = float(_rowdist(cfg.unit_embeddings, cfg.unit_proxies[assign]).max())
    return eps, assign


def _failed_report(name, n, cfg, eps, pre, extra=None) -> BoundReport:
    details = {"preconditions": pre}
    details.update(extra or {})
    return BoundReport(name, 0, 0, 0.0, 0.0, eps, cfg.alpha, cfg.norm_stats(), n, details)


def verify_nca_bound(
    embeddings, proxies, anchors, positives, negatives, assign=None,
    distance_scale: float = 0.5, norm_tol: float = NORM_TOL,
) -> BoundReport:
    """NCA on unit points vs. NCA on points and proxies.

    Gated form: ``L_hat <= alpha L(x, p_y, p_Z) + (1 - alpha) log|Z| + 2 sqrt(2 eps)``.
    The tighter ``2 sqrt(eps)`` form is reported in ``details`` only.
    ``negatives`` is an (S, m) index array; all samples share ``|Z| = m``.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    p = np.atleast_2d(np.asarray(proxies, dtype=np.float64))
    a = np.asarray(anchors, dtype=np.int64).ravel()
    y = np.asarray(positives, dtype=np.int64).ravel()
    zs = np.asarray(negatives, dtype=np.int64).reshape(a.size, -1)
    m = zs.shape[1]
    if m < 1:
        raise ConfigError("need at least one negative per sample")
    cfg = normalize_config(x, p)
    eps, assign = _unit_epsilon(cfg, assign)
    pre = _norm_preconditions(cfg, norm_tol)
    extra = {"distance_scale": distance_scale, "num_negatives": m,
             "epsilon_convention": "max squared distance between unit point and unit proxy"}
    if not (pre["constant_norms"] and pre["alpha_le_one"]):
        return _failed_report("nca", a.size, cfg, eps, pre, extra)

    ux, alpha, s = cfg.unit_embeddings, cfg.alpha, distance_scale
    lhs = nca_from_distances(s * _rowdist(ux[a], ux[y]), s * _rowdist(ux[a][:, None, :], ux[zs]))
    proxy_loss = nca_from_distances(s * _rowdist(x[a], p[assign[y]]),
                                    s * _rowdist(x[a][:, None, :], p[assign[zs]]))
    base = alpha * proxy_loss + (1.0 - alpha) * math.log(m)
    slack = base + 2.0 * math.sqrt(2.0 * eps) - lhs
    tight = base + 2.0 * math.sqrt(eps) - lhs
    lo, mean = _slack_summary(slack)
    tlo, _ = _slack_summary(tight)
    extra.update(preconditions=pre, tight_violations=int(np.sum(tight < -SLACK_TOL)), tight_max_slack=tlo)
    return BoundReport("nca", int(a.size), int(np.sum(slack < -SLACK_TOL)), lo, mean, eps, alpha,
                       cfg.norm_stats(), 0, extra)


def _triplet_terms(x, p, cfg, assign, t, margin, s):
    ux = cfg.unit_embeddings
    a, y, z = t[:, 0], t[:, 1], t[:, 2]
    lhs = np.maximum(0.0, s * _rowdist(ux[a], ux[y]) - s * _rowdist(ux[a], ux[z]) + margin)
    proxy_loss = np.maximum(0.0, s * _rowdist(x[a], p[assign[y]]) - s * _rowdist(x[a], p[assign[z]]) + margin)
    return lhs, proxy_loss


def verify_triplet_bound(
    embeddings, proxies, triplets, margin: float, assign=None,
    distance_scale: float = 0.5, norm_tol: float = NORM_TOL,
) -> BoundReport:
    """``L_hat_triplet <= alpha L_triplet(x, p_y, p_z) + (1 - alpha) M + 2 sqrt(eps)``."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    p = np.atleast_2d(np.asarray(proxies, dtype=np.float64))
    t = _triplets(triplets)
    cfg = normalize_config(x, p)
    eps, assign = _unit_epsilon(cfg, assign)
    pre = _norm_preconditions(cfg, norm_tol)
    extra = {"distance_scale": distance_scale, "margin": margin,
             "epsilon_convention": "max squared distance between unit point and unit proxy"}
    if not (pre["constant_norms"] and pre["alpha_le_one"]):
        return _failed_report("triplet", t.shape[0], cfg, eps, pre, extra)
    lhs, proxy_loss = _triplet_terms(x, p, cfg, assign, t, margin, distance_scale)
    alpha = cfg.alpha
    slack = alpha * proxy_loss + (1.0 - alpha) * margin + 2.0 * math.sqrt(eps) - lhs
    lo, mean = _slack_summary(slack)
    extra["preconditions"] = pre
    return BoundReport("triplet", int(t.shape[0]), int(np.sum(slack < -SLACK_TOL)), lo, mean, eps, alpha,
                       cfg.norm_stats(), 0, extra)


def enumerate_triplets(labels) -> np.ndarray:
    """All (x, y, z) index triples with c(x) = c(y) != c(z) and y != x."""
    labels = np.asarray(labels)
    out = []
    idx = np.arange(labels.size)
    for a in idx:
        pos = idx[(labels == labels[a]) & (idx != a)]
        neg = idx[labels != labels[a]]
        if pos.size and neg.size:
            yy, zz = np.meshgrid(pos, neg, indexing="ij")
            out.append(np.column_stack([np.full(yy.size, a), yy.ravel(), zz.ravel()]))
    return np.concatenate(out) if out else np.empty((0, 3), dtype=np.int64)


def verify_total_loss_bound(
    embeddings, labels, proxies, assign=None, margin: float = 1.0, loss: str = "triplet",
    alpha: float | None = None, delta: float | None = None,
    max_triplets: int = 10**6, sample: int | None = None, seed: int = 0,
    distance_scale: float = 0.5, norm_tol: float = NORM_TOL,
) -> BoundReport:
    """Total-loss bound over the whole triplet population.

    ``mean L_hat(x,y,z) <= alpha / |D| * sum_g n_g L(x, p_y, p_z) + delta`` with the
    sum over groups ``g = (x, p_y, p_z)``. ``loss`` is ``"triplet"`` or
    ``"nca"`` (one negative per triplet). ``alpha``/``delta`` default to the
    per-triplet constants of the matching bound; passing both skips the norm
    preconditions. Populations above ``max_triplets`` need ``sample``; the
    result is then flagged as an estimate.
    """
    if loss not in ("triplet", "nca"):
        raise ConfigError(f"loss must be 'triplet' or 'nca', got {loss!r}")
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    p = np.atleast_2d(np.asarray(proxies, dtype=np.float64))
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    population = int(np.sum(counts * (counts - 1) * (labels.size - counts)))
    estimated = population > max_triplets
    if estimated:
        if sample is None:
            raise ConfigError(f"{population} triplets exceed max_triplets={max_triplets}; pass sample=N")
        t = _sample_triplets(labels, sample, np.random.default_rng(seed))
    else:
        t = enumerate_triplets(labels)
    cfg = normalize_config(x, p)
    eps, assign = _unit_epsilon(cfg, assign)
    pre = _norm_preconditions(cfg, norm_tol)
    extra = {"loss": loss, "distance_scale": distance_scale, "margin": margin,
             "population": population, "estimated": estimated}
    custom = alpha is not None and delta is not None
    if not custom and not (pre["constant_norms"] and pre["alpha_le_one"]):
        return _failed_report("total_loss", 1, cfg, eps, pre, extra)
    if t.shape[0] == 0:
        return BoundReport("total_loss", 0, 0, 0.0, 0.0, eps, cfg.alpha, cfg.norm_stats(), 0, extra)

    s = distance_scale
    if loss == "triplet":
        lhs, proxy_loss = _triplet_terms(x, p, cfg, assign, t, margin, s)
        default_delta = (1.0 - cfg.alpha) * margin + 2.0 * math.sqrt(eps)
    else:
        ux = cfg.unit_embeddings
        a, y, z = t.T
        lhs = nca_from_distances(s * _rowdist(ux[a], ux[y]), s * _rowdist(ux[a], ux[z])[:, None])
        proxy_loss = nca_from_distances(s * _rowdist(x[a], p[assign[y]]), s * _rowdist(x[a], p[assign[z]])[:, None])
        default_delta = 2.0 * math.sqrt(2.0 * eps)  # log|Z| = 0
    alpha = cfg.alpha if alpha is None else float(alpha)
    delta = default_delta if delta is None else float(delta)

    keys = np.column_stack([t[:, 0], assign[t[:, 1]], assign[t[:, 2]]])
    groups, first, n_g = np.unique(keys, axis=0, return_index=True, return_counts=True)
    rhs = alpha / t.shape[0] * float(np.sum(n_g * proxy_loss[first])) + delta
    rhs_flat = alpha * float(proxy_loss.mean()) + delta
    lhs_total = float(lhs.mean())
    slack = rhs - lhs_total
    extra.update(
        preconditions=pre, lhs=lhs_total, rhs=rhs, rhs_ungrouped=rhs_flat, num_groups=int(groups.shape[0]),
        delta=delta,
    )
    return BoundReport("total_loss", 1, int(slack < -SLACK_TOL), slack, slack, eps, alpha, cfg.norm_stats(), 0,
                       extra)


def _sample_triplets(labels: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    idx = np.arange(labels.size)
    counts = np.bincount(labels)
    weight = (counts[labels] - 1) * (labels.size - counts[labels])
    if weight.sum() == 0:
        return np.empty((0, 3), dtype=np.int64)
    anchors = rng.choice(labels.size, size=n, p=weight / weight.sum())
    out = np.empty((n, 3), dtype=np.int64)
    for i, a in enumerate(anchors):
        pos = idx[(labels == labels[a]) & (idx != a)]
        neg = idx[labels != labels[a]]
        out[i] = a, rng.choice(pos), rng.choice(neg)
    return out


# ------------------------------------------------------------ generators


@dataclass
class BoundConfig:
    embeddings: np.ndarray
    labels: np.ndarray
    proxies: np.ndarray
    assign: np.ndarray


def random_constant_norm_config(
    rng: np.random.Generator, num_classes: int = 4, per_class: int = 3, dim: int = 3,
    spread: float = 0.3, norm_x: float = 2.0, norm_p: float = 1.5,
) -> BoundConfig:
    """Points scattered around one proxy direction per class, all rescaled to
    norm ``norm_x`` (points) and ``norm_p`` (proxies). Proxy ``c`` serves class ``c``."""
    dirs = rng.normal(size=(num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    pts = dirs[labels] + spread * rng.normal(size=(labels.size, dim))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return BoundConfig(norm_x * pts, labels, norm_p * dirs, labels.copy())


def sample_labeled_triplets(rng: np.random.Generator, labels: np.ndarray, n: int, num_negatives: int = 1):
    """Random (anchor, positive, negatives) with the positive in the anchor's class
    and distinct negatives from other classes."""
    labels = np.asarray(labels)
    idx = np.arange(labels.size)
    a_out, y_out, z_out = [], [], []
    eligible = [i for i in idx if np.sum(labels == labels[i]) > 1 and np.sum(labels != labels[i]) >= num_negatives]
    if not eligible:
        raise ConfigError("no anchor has both a positive and enough negatives")
    for a in rng.choice(eligible, size=n):
        pos = idx[(labels == labels[a]) & (idx != a)]
        neg = idx[labels != labels[a]]
        a_out.append(a)
        y_out.append(rng.choice(pos))
        z_out.append(rng.choice(neg, size=num_negatives, replace=False))
    return np.array(a_out), np.array(y_out), np.array(z_out)
