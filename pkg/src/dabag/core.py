"""Shared data model: datasets, the metric, and seeded splittable RNG streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UsageError(Exception):
    """The caller violated an API precondition (bad arguments, missing labels)."""


class ConfigError(Exception):
    """A configuration value or file is invalid."""


class DataError(Exception):
    """Input data is malformed (CSV parse failure, non-finite features, ...)."""


class InternalError(Exception):
    """A should-never-happen invariant was violated."""


@dataclass(frozen=True)
class RngStream:
    """Splittable random stream addressed by a master seed and an integer path.

    Two streams with identical ``(seed, path)`` produce identical draws, and
    distinct paths are statistically independent (numpy ``SeedSequence`` spawn
    keys).  Deriving a child is pure, so concurrent tasks each derive their own
    stream and results never depend on scheduling or thread count.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngStream":
        """Derive the sub-stream at ``path + indices``."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; repeated calls restart the stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Metric:
    """Euclidean metric with optional per-feature z-score standardization.

    Standardization parameters are frozen from a training dataset via
    :meth:`standardized` and then applied to every point the metric touches.
    Off by default: the reference simulations run on raw features.
    """

    kind: str = "euclidean"
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.kind != "euclidean":
            raise ConfigError(f"unsupported metric kind: {self.kind!r}")
        if (self.center is None) != (self.scale is None):
            raise ConfigError("center and scale must be given together")

    @staticmethod
    def standardized(train: "Dataset") -> "Metric":
        """Metric whose coordinates are z-scored by `train`'s column statistics."""
        center = train.features.mean(axis=0)
        scale = train.features.std(axis=0)
        # constant features pass through unscaled
        scale = np.where(scale > 0.0, scale, 1.0)
        return Metric(center=center, scale=scale)

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.center is None:
            return x
        return (x - self.center) / self.scale


def _as_features(features) -> np.ndarray:
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise UsageError(f"features must be 2-d, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with optional 1-based integer class labels.

    Labels live in ``{1..n_classes}``; arbitrary input label strings are mapped
    to this range by the CSV layer, which records the mapping in
    ``label_names`` (``label_names[i]`` names class ``i + 1``).
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = _as_features(self.features)
        object.__setattr__(self, "features", x)
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise UsageError(f"dataset must have n >= 1 and p >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        if self.labels is not None:
            y = np.ascontiguousarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise UsageError(
                    f"labels shape {y.shape} does not match n={x.shape[0]}"
                )
            if y.min() < 1:
                raise UsageError("labels must be 1-based positive integers")
            n_classes = self.n_classes
            if n_classes is None:
                n_classes = max(int(y.max()), 2)
            if int(y.max()) > n_classes:
                raise UsageError(
                    f"label {int(y.max())} exceeds n_classes={n_classes}"
                )
            if n_classes < 2:
                raise UsageError("n_classes must be >= 2 when labels are present")
            object.__setattr__(self, "labels", y)
            object.__setattr__(self, "n_classes", int(n_classes))
        if self.label_names is not None:
            if self.n_classes is None or len(self.label_names) != self.n_classes:
                raise UsageError("label_names length must equal n_classes")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise UsageError("operation requires a labeled dataset")
        return self.labels

    def without_labels(self) -> "Dataset":
        return Dataset(self.features)

    def subset(self, rows) -> "Dataset":
        """Dataset holding the given rows (labels carried over when present)."""
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.features[rows], labels, self.n_classes, self.label_names)

    def class_indices(self, label: int) -> np.ndarray:
        """Row indices holding `label`, in increasing row order."""
        return np.nonzero(self.require_labels() == label)[0]


def class_proportions(d: Dataset) -> np.ndarray:
    """Per-class observation proportions, a length-L vector summing to one."""
    y = d.require_labels()
    counts = np.bincount(y, minlength=d.n_classes + 1)[1:]
    return counts / float(d.n)


def distance(a, b, metric: Metric = Metric()) -> float:
    """Distance between two points under `metric`.

    Raises UsageError on dimension mismatch.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = metric.transform(a) - metric.transform(b)
    return float(np.sqrt(np.dot(diff, diff)))


def check_same_dim(a: Dataset, b: Dataset) -> None:
    if a.p != b.p:
        raise UsageError(f"feature dimension mismatch: {a.p} vs {b.p}")
