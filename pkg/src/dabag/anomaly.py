"""Distance-to-measure anomaly screening with data-split thresholds.

A point's score against class ``l`` is the root mean squared distance to its
k nearest rows of that class.  Per-class cutoffs are the empirical (1-alpha)
quantiles of those scores on held-out same-class points; a test point is
flagged only when it exceeds the cutoff in every class.  Flagged points are
removed before resampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import ceil

import numpy as np

from .core import ConfigError, Dataset, Metric, RngStream, UsageError
from .neighbors import knn_batch


@dataclass(frozen=True)
class AnomalyConfig:
    """Neighbor count, nominal level and calibration split fraction."""

    k: int = 10
    alpha: float = 0.1
    split_fraction: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class AnomalyCalibration:
    """Per-class score cutoffs (distance scale) with split bookkeeping."""

    thresholds: np.ndarray
    calibration_sizes: tuple[int, ...]
    config: AnomalyConfig
    clamped: bool = False

    def __post_init__(self):
        if np.any(self.thresholds < 0):
            raise ConfigError("thresholds must be non-negative")


def _dtm_from_d2(d2: np.ndarray) -> np.ndarray:
    return np.sqrt(d2.mean(axis=1))


def _clamp_k(k: int, n_ref: int, what: str) -> int:
    if k > n_ref:
        warnings.warn(
            f"k={k} exceeds {what} size {n_ref}; clamping", RuntimeWarning, stacklevel=3
        )
        return n_ref
    return k


def dtm_hat(x, class_data: Dataset, k: int, metric: Metric = Metric()) -> float:
    """Root mean squared distance from x to its k nearest rows of class_data."""
    k_eff = _clamp_k(k, class_data.n, "class data")
    _, d2, _ = knn_batch(np.asarray(x, dtype=np.float64), class_data, k_eff, metric)
    return float(_dtm_from_d2(d2)[0])


def dtm_scores(
    x: np.ndarray, train: Dataset, k: int, metric: Metric = Metric()
) -> np.ndarray:
    """(m, L) matrix of per-class scores against the full per-class data."""
    train.require_labels()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty((x.shape[0], train.n_classes))
    for c in range(train.n_classes):
        rows = train.class_indices(c + 1)
        if rows.size == 0:
            raise UsageError(f"class {c + 1} has no training rows")
        cls = train.subset(rows).without_labels()
        k_eff = _clamp_k(k, cls.n, f"class {c + 1}")
        _, d2, _ = knn_batch(x, cls, k_eff, metric)
        out[:, c] = _dtm_from_d2(d2)
    return out


def _quantile_index(n: int, alpha: float) -> int:
    """1-based order statistic ceil((1 - alpha) * n), at least 1."""
    return max(1, ceil((1.0 - alpha) * n))


def calibrate(
    train: Dataset,
    cfg: AnomalyConfig,
    rng: RngStream,
    metric: Metric = Metric(),
) -> AnomalyCalibration:
    """Split each class and set its cutoff from held-out same-class scores.

    Class ``l`` is split at ``split_fraction``; rows in the first part are
    scored against the second, and the cutoff is the (1-alpha) empirical
    quantile (inclusive order statistic) of those scores.
    """
    train.require_labels()
    thresholds = np.empty(train.n_classes)
    sizes = []
    clamped = False
    for c in range(train.n_classes):
        rows = train.class_indices(c + 1)
        n_c = rows.size
        if n_c < 2 * (cfg.k + 1):
            raise ConfigError(
                f"class {c + 1} has {n_c} rows; calibration needs at least {2 * (cfg.k + 1)}"
            )
        # canonical within-class order: thresholds depend on the point set and
        # the stream, not on how the caller happened to order the rows
        rows = rows[np.lexsort(train.features[rows].T)]
        perm = rng.child(c + 1).generator().permutation(n_c)
        n1 = min(max(int(round(cfg.split_fraction * n_c)), 1), n_c - 1)
        score_rows = rows[perm[:n1]]
        ref_rows = rows[perm[n1:]]
        ref = train.subset(ref_rows).without_labels()
        k_eff = min(cfg.k, ref.n)
        clamped = clamped or k_eff < cfg.k
        _, d2, _ = knn_batch(train.features[score_rows], ref, k_eff, metric)
        scores = np.sort(_dtm_from_d2(d2))
        thresholds[c] = scores[_quantile_index(n1, cfg.alpha) - 1]
        sizes.append(n1)
    return AnomalyCalibration(thresholds, tuple(sizes), cfg, clamped)


def test_statistic(
    x, train: Dataset, cal: AnomalyCalibration, metric: Metric = Metric()
) -> int:
    """1 iff x exceeds its class cutoff in every class, else 0."""
    scores = dtm_scores(np.asarray(x, dtype=np.float64), train, cal.config.k, metric)
    return int(np.all(scores[0] > cal.thresholds))


def filter_anomalies(
    test,
    train: Dataset,
    cal: AnomalyCalibration,
    metric: Metric = Metric(),
) -> tuple[np.ndarray, np.ndarray]:
    """Partition test row indices into (inliers, anomalies).

    `test` may be a Dataset or a raw feature matrix (possibly empty).
    """
    features = test.features if isinstance(test, Dataset) else np.atleast_2d(
        np.asarray(test, dtype=np.float64)
    )
    if features.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    scores = dtm_scores(features, train, cal.config.k, metric)
    flagged = np.all(scores > cal.thresholds[None, :], axis=1)
    idx = np.arange(features.shape[0], dtype=np.int64)
    return idx[~flagged], idx[flagged]
