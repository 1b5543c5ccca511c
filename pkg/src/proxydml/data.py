"""Labeled vector datasets, synthetic generation, CSV I/O and zero-shot splits.

Datasets are plain feature vectors; class labels are always stored as the
contiguous range ``0..L-1`` so that static proxies can be indexed by label.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if points.ndim != 2 or points.shape[1] < 1:
            raise ConfigError(f"points must be a 2-D array with D >= 1, got shape {points.shape}")
        if labels.shape != (points.shape[0],):
            raise ConfigError(f"{labels.shape[0] if labels.ndim else 0} labels for {points.shape[0]} points")
        if labels.size:
            present = np.unique(labels)
            if present[0] != 0 or present[-1] != present.size - 1:
                raise ConfigError("labels must form the contiguous range 0..L-1")
        points.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        # name is display metadata and does not take part in equality
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 16
    points_per_class: int = 50
    ambient_dim: int = 32
    class_center_scale: float = 10.0
    intra_class_stddev: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_classes", "points_per_class", "ambient_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if not np.isfinite(self.class_center_scale) or self.class_center_scale < 0:
            raise ConfigError("class_center_scale must be finite and >= 0")
        if not np.isfinite(self.intra_class_stddev) or self.intra_class_stddev < 0:
            raise ConfigError("intra_class_stddev must be finite and >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitSpec:
    train_class_ids: tuple[int, ...]
    test_class_ids: tuple[int, ...]

    def __post_init__(self):
        if set(self.train_class_ids) & set(self.test_class_ids):
            raise ConfigError("train and test class sets overlap")

    def to_json(self) -> str:
        return json.dumps(
            {"train_class_ids": list(self.train_class_ids), "test_class_ids": list(self.test_class_ids)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        try:
            obj = json.loads(text)
            return cls(
                tuple(int(c) for c in obj["train_class_ids"]),
                tuple(int(c) for c in obj["test_class_ids"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad split file: {exc}") from exc


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Gaussian blobs around uniformly drawn class centers.

    Centers come from the seeded generator first, then the per-point noise,
    so the output is a pure function of ``cfg``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    centers = rng.uniform(
        -cfg.class_center_scale, cfg.class_center_scale, size=(cfg.num_classes, cfg.ambient_dim)
    )
    noise = rng.normal(0.0, 1.0, size=(cfg.num_classes, cfg.points_per_class, cfg.ambient_dim))
    points = centers[:, None, :] + cfg.intra_class_stddev * noise
    labels = np.repeat(np.arange(cfg.num_classes), cfg.points_per_class)
    name = f"synth-c{cfg.num_classes}-n{cfg.points_per_class}-d{cfg.ambient_dim}-s{cfg.seed}"
    return Dataset(points.reshape(-1, cfg.ambient_dim), labels, name)


def save_csv(ds: Dataset, path: str | Path) -> None:
    # repr-precision floats round-trip exactly
    lines = [
        ",".join([str(int(label))] + [repr(float(v)) for v in row])
        for label, row in zip(ds.labels, ds.points)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_csv(path: str | Path, name: str | None = None) -> Dataset:
    """Read ``label,v1,...,vD`` rows; labels are remapped by first appearance."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    label_ids: dict[str, int] = {}
    rows: list[list[float]] = []
    labels: list[int] = []
    dim = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = [f.strip() for f in raw.split(",")]
        if len(fields) < 2:
            raise ParseError("expected a label followed by at least one value", lineno)
        if dim is None:
            dim = len(fields) - 1
        elif len(fields) - 1 != dim:
            raise ParseError(f"expected {dim} values, found {len(fields) - 1}", lineno)
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", lineno)
        labels.append(label_ids.setdefault(fields[0], len(label_ids)))
        rows.append(values)
    if not rows:
        raise ParseError("empty dataset file", 1)
    return Dataset(np.array(rows), np.array(labels), name or path.stem)


def make_split(num_classes: int, train_fraction: float, seed: int = 0, ordered: bool = False) -> SplitSpec:
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    # tolerate representation error such as 10 * 0.7 = 6.999...
    n_train = math.floor(round(num_classes * train_fraction, 9))
    if n_train < 1 or n_train >= num_classes:
        raise ConfigError(
            f"splitting {num_classes} classes at fraction {train_fraction} leaves one side empty"
        )
    ids = np.arange(num_classes)
    if not ordered:
        ids = np.random.default_rng(seed).permutation(num_classes)
    return SplitSpec(
        tuple(sorted(int(c) for c in ids[:n_train])),
        tuple(sorted(int(c) for c in ids[n_train:])),
    )


def subset_classes(ds: Dataset, class_ids, name: str | None = None) -> Dataset:
    """Points of the given classes, labels renumbered in increasing original-id order."""
    class_ids = sorted(int(c) for c in class_ids)
    remap = np.full(ds.num_classes, -1, dtype=np.int64)
    remap[class_ids] = np.arange(len(class_ids))
    mask = remap[ds.labels] >= 0
    return Dataset(ds.points[mask], remap[ds.labels[mask]], name or ds.name)


def apply_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    covered = set(spec.train_class_ids) | set(spec.test_class_ids)
    if covered != set(range(ds.num_classes)):
        raise ConfigError("split does not cover exactly the dataset's classes")
    return (
        subset_classes(ds, spec.train_class_ids, f"{ds.name}-train"),
        subset_classes(ds, spec.test_class_ids, f"{ds.name}-test"),
    )


def split_zero_shot(
    ds: Dataset, train_fraction: float = 0.5, seed: int = 0, ordered: bool = False
) -> tuple[Dataset, Dataset]:
    """Split by class so that no test class is seen in training."""
    return apply_split(ds, make_split(ds.num_classes, train_fraction, seed, ordered))
