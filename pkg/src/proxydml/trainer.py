"""Joint SGD training of the embedding model and its proxies."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import losses
from .data import Dataset
from .embedding import (
    EmbeddingModel,
    embed,
    embed_backward,
    embed_forward,
    init_model,
    normalize_backward,
    normalize_forward,
)
from .errors import ConfigError, NumericError
from .evaluation import cluster_quality, recall_at_k
from .proxies import ProxySet, assign_dynamic_batch, fractional_preassign, init_proxies, proxy_approx_error, proxy_count

log = logging.getLogger(__name__)

LOSS_KINDS = ("proxy_nca", "proxy_triplet", "nca_batch", "triplet_semihard")
OPTIMIZERS = ("sgd", "rms_adaptive")
PROXY_LOSSES = ("proxy_nca", "proxy_triplet")


@dataclass
class TrainConfig:
    loss_kind: str = "proxy_nca"
    batch_size: int = 32
    steps: int = 1000
    learning_rate: float = 0.01
    lr_decay_rate: float = 0.94
    lr_decay_every: int = 100
    optimizer: str = "rms_adaptive"
    rms_decay: float = 0.9
    margin: float = 1.0
    proxy_ratio: float = 1.0
    assignment: str = "static"
    normalize_embeddings_in_loss: bool = False
    seed: int = 0
    eval_every: int = 50
    eval_ks: tuple[int, ...] = (1, 2, 4, 8)

    def validate(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.assignment not in ("static", "dynamic"):
            raise ConfigError(f"assignment must be static or dynamic, got {self.assignment!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.lr_decay_rate <= 1:
            raise ConfigError("lr_decay_rate must lie in (0, 1]")
        if self.lr_decay_every < 1 or self.eval_every < 1:
            raise ConfigError("lr_decay_every and eval_every must be at least 1")
        if not 0 <= self.rms_decay < 1:
            raise ConfigError("rms_decay must lie in [0, 1)")
        if self.margin < 0:
            raise ConfigError("margin must be nonnegative")
        if not self.proxy_ratio > 0:
            raise ConfigError("proxy_ratio must be positive")


@dataclass
class ModelConfig:
    embed_dim: int = 64
    hidden: tuple[int, ...] = ()
    activation: str = "relu"


@dataclass
class MetricsRecord:
    step: int
    loss: float | None
    learning_rate: float
    recall_at_k: dict[int, float] | None = None
    nmi: float | None = None
    epsilon: float | None = None
    wall_clock_ms: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        if d["recall_at_k"] is not None:
            d["recall_at_k"] = {str(k): v for k, v in d["recall_at_k"].items()}
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        if d.get("recall_at_k") is not None:
            d["recall_at_k"] = {int(k): v for k, v in d["recall_at_k"].items()}
        return cls(**d)

    @property
    def is_eval(self) -> bool:
        return self.recall_at_k is not None


@dataclass
class TrainResult:
    model: EmbeddingModel
    proxies: ProxySet
    records: list[MetricsRecord] = field(default_factory=list)
    # (num positives, num negatives) per anchor, for proxy losses
    proxy_usage: list[tuple[int, int]] = field(default_factory=list)


class TrainingAborted(NumericError):
    def __init__(self, message: str, record: MetricsRecord):
        super().__init__(message)
        self.record = record


def learning_rate_at(cfg: TrainConfig, steps_done: int) -> float:
    return cfg.learning_rate * cfg.lr_decay_rate ** (steps_done // cfg.lr_decay_every)


def sgd_update(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return param - lr * grad


def rms_adaptive_update(param, grad, state, lr: float, rms_decay: float, eps: float = 1e-8):
    """RMSprop step. ``state`` is the running mean of squared gradients."""
    state = rms_decay * state + (1.0 - rms_decay) * grad * grad
    return param - lr * grad / (np.sqrt(state) + eps), state


def _seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def build_proxies(cfg: TrainConfig, num_labels: int, embed_dim: int) -> ProxySet:
    """Proxy set for a run: identity map at ratio 1, random pre-assignment otherwise."""
    n = proxy_count(num_labels, cfg.proxy_ratio)
    if cfg.assignment == "dynamic":
        return init_proxies(n, embed_dim, seed=_seed(cfg.seed, 1), mode="dynamic", ratio=cfg.proxy_ratio)
    if cfg.proxy_ratio == 1.0:
        mapping = np.arange(num_labels)
    else:
        mapping = fractional_preassign(num_labels, cfg.proxy_ratio, seed=_seed(cfg.seed, 2))
    return init_proxies(n, embed_dim, seed=_seed(cfg.seed, 1), mode="static", label_to_proxy=mapping,
                        ratio=cfg.proxy_ratio)


def init_run(cfg: TrainConfig, train_ds: Dataset, model_cfg: ModelConfig | None = None):
    """Seeded initial model and proxies for a run."""
    model_cfg = model_cfg or ModelConfig()
    model = init_model(train_ds.dim, model_cfg.embed_dim, model_cfg.hidden, model_cfg.activation,
                       seed=_seed(cfg.seed, 0))
    return model, build_proxies(cfg, train_ds.num_classes, model.embed_dim)


def sample_batch(rng: np.random.Generator, labels: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    n = labels.size
    if cfg.loss_kind in PROXY_LOSSES:
        return rng.choice(n, size=cfg.batch_size, replace=cfg.batch_size > n)
    # class-balanced: ceil(b/4) classes x 4 instances, so in-batch positives exist
    classes = np.unique(labels)
    n_cls = min(classes.size, math.ceil(cfg.batch_size / 4))
    picked = rng.choice(classes, size=n_cls, replace=False)
    idx = []
    for c in picked:
        members = np.flatnonzero(labels == c)
        idx.append(rng.choice(members, size=4, replace=members.size < 4))
    return np.concatenate(idx)


def _proxy_loss(cfg, emb, proxy_vecs, positives, usage):
    """Mean proxy loss over the batch and its gradients w.r.t. embeddings and proxies."""
    b, m = emb.shape[0], proxy_vecs.shape[0]
    g_emb = np.zeros_like(emb)
    g_prox = np.zeros_like(proxy_vecs)
    total = 0.0
    all_idx = np.arange(m)
    for i in range(b):
        pos = positives[i]
        neg = all_idx[all_idx != pos]
        usage.append((1, neg.size))
        if cfg.loss_kind == "proxy_nca":
            out = losses.proxy_nca_loss(emb[i], proxy_vecs[pos], proxy_vecs[neg])
            total += out.value
            g_emb[i] += out.grad_anchor
            g_prox[pos] += out.grad_positive
            g_prox[neg] += out.grad_negatives
        else:
            # one hinge per negative proxy, averaged
            for j in neg:
                out = losses.proxy_triplet_loss(emb[i], proxy_vecs[pos], proxy_vecs[j], cfg.margin)
                total += out.value / neg.size
                g_emb[i] += out.grad_anchor / neg.size
                g_prox[pos] += out.grad_positive / neg.size
                g_prox[j] += out.grad_negatives[0] / neg.size
    return total / b, g_emb / b, g_prox / b


def evaluate(model: EmbeddingModel, proxies: ProxySet, ds: Dataset, ks=(1, 2, 4, 8), seed: int = 0) -> dict:
    """Recall@K, NMI (k-means with K = number of classes) and proxy error on ``ds``."""
    emb = embed(model, ds.points)
    ks = [k for k in ks if k <= len(ds) - 1]
    retrieval = recall_at_k(emb, ds.labels, ks)
    clustering = cluster_quality(emb, ds.labels, seed=seed)
    eps = proxy_approx_error(emb, proxies.vectors)
    return {
        "recall_at": retrieval.recall_at,
        "nmi": clustering.nmi,
        "epsilon": eps.epsilon,
        "num_queries": retrieval.num_queries,
        "kmeans_inertia": clustering.kmeans_inertia,
    }


def train(
    cfg: TrainConfig,
    train_ds: Dataset,
    eval_ds: Dataset | None = None,
    model_cfg: ModelConfig | None = None,
    on_record: Callable[[MetricsRecord], None] | None = None,
    on_eval: Callable[[int, EmbeddingModel, ProxySet], None] | None = None,
    model: EmbeddingModel | None = None,
    proxies: ProxySet | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` optimisation steps.

    Each step samples a batch, forms the loss (for proxy losses: the assigned
    proxy as positive and every other proxy as a negative), back-propagates
    into both the model and the proxies and applies the optimizer. Eval
    records are emitted after every ``eval_every`` steps and after the last.
    """
    cfg.validate()
    if len(train_ds) == 0:
        raise ConfigError("training set is empty")
    if model is None or proxies is None:
        fresh_model, fresh_proxies = init_run(cfg, train_ds, model_cfg)
        model = fresh_model if model is None else model
        proxies = fresh_proxies if proxies is None else proxies
    result = TrainResult(model, proxies)
    rng = np.random.default_rng(_seed(cfg.seed, 3))
    params = model.parameters()
    rms_state = [np.zeros_like(p) for p in params]
    proxy_state = np.zeros_like(proxies.vectors)
    labels = train_ds.labels
    start = time.perf_counter()

    def emit(rec: MetricsRecord) -> None:
        rec.wall_clock_ms = int((time.perf_counter() - start) * 1000)
        result.records.append(rec)
        if on_record is not None:
            on_record(rec)

    for step in range(cfg.steps):
        lr = learning_rate_at(cfg, step)
        idx = sample_batch(rng, labels, cfg)
        try:
            x, cache = embed_forward(model, train_ds.points[idx])
        except NumericError as exc:
            raise TrainingAborted(f"step {step + 1}: {exc}", MetricsRecord(step + 1, None, lr)) from None
        emb, pvec = x, proxies.vectors
        if cfg.normalize_embeddings_in_loss:
            emb, emb_norms = normalize_forward(x)
            pvec, p_norms = normalize_forward(proxies.vectors)

        g_prox = None
        if cfg.loss_kind in PROXY_LOSSES:
            if proxies.mode == "static":
                positives = proxies.label_to_proxy[labels[idx]]
            else:
                # assignment is piecewise constant: no gradient through the argmin
                positives = assign_dynamic_batch(emb, pvec)
            value, g_emb, g_prox = _proxy_loss(cfg, emb, pvec, positives, result.proxy_usage)
        elif cfg.loss_kind == "triplet_semihard":
            out = losses.semihard_triplet_batch_loss(emb, labels[idx], cfg.margin)
            value, g_emb = out.value, out.grad_embeddings
        else:
            out = losses.nca_batch_loss(emb, labels[idx])
            value, g_emb = out.value, out.grad_embeddings

        if not math.isfinite(value):
            raise TrainingAborted(f"non-finite loss at step {step + 1}", MetricsRecord(step + 1, None, lr))

        if cfg.normalize_embeddings_in_loss:
            g_emb = normalize_backward(emb, emb_norms, g_emb)
            if g_prox is not None:
                g_prox = normalize_backward(pvec, p_norms, g_prox)

        grads = embed_backward(model, cache, g_emb).parameters()
        for i, (p, g) in enumerate(zip(params, grads)):
            if cfg.optimizer == "sgd":
                p[...] = sgd_update(p, g, lr)
            else:
                p[...], rms_state[i] = rms_adaptive_update(p, g, rms_state[i], lr, cfg.rms_decay)
        if g_prox is not None:
            if cfg.optimizer == "sgd":
                proxies.vectors[...] = sgd_update(proxies.vectors, g_prox, lr)
            else:
                proxies.vectors[...], proxy_state = rms_adaptive_update(
                    proxies.vectors, g_prox, proxy_state, lr, cfg.rms_decay)

        emit(MetricsRecord(step + 1, float(value), lr))

        done = step + 1
        if eval_ds is not None and (done % cfg.eval_every == 0 or done == cfg.steps):
            report = evaluate(model, proxies, eval_ds, cfg.eval_ks, seed=cfg.seed)
            emit(MetricsRecord(done, None, lr, report["recall_at"], report["nmi"], report["epsilon"]))
            if on_eval is not None:
                on_eval(done, model, proxies)
    return result


@dataclass
class TripletSpaceReport:
    num_points: int
    num_classes: int
    balanced: bool
    total_triplets: int
    batch_size: int
    batch_triplets: int
    steps_to_cover: float


def count_triplets(class_counts) -> int:
    """Triplets (x, y, z) with c(x) = c(y) != c(z) and y != x."""
    counts = [int(c) for c in class_counts if c > 0]
    n = sum(counts)
    return sum(c * (c - 1) * (n - c) for c in counts)


def balanced_triplet_count(n: int, k: int) -> int:
    return n * n * (n - k) * (k - 1) // (k * k)


def triplet_space_report(ds: Dataset, batch_size: int = 32) -> TripletSpaceReport:
    """Size of the triplet space against what one batch can cover.

    The batch figure counts the triplets inside a batch whose class
    proportions match the dataset's.
    """
    counts = ds.class_counts()
    counts = counts[counts > 0]
    n, k = int(counts.sum()), int(counts.size)
    balanced = k >= 1 and bool(np.all(counts == counts[0]))
    total = balanced_triplet_count(n, k) if balanced and k >= 2 else count_triplets(counts)
    share = counts / n
    per_batch = float(np.sum(batch_size * share * np.maximum(batch_size * share - 1, 0) * batch_size * (1 - share)))
    batch_triplets = int(round(per_batch))
    steps = total / batch_triplets if batch_triplets else math.inf
    return TripletSpaceReport(n, k, balanced, total, batch_size, batch_triplets, steps)
