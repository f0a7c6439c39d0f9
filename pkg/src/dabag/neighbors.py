"""Exact k-nearest-neighbor queries and neighbor class-frequency weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Dataset, Metric, RngStream, UsageError

# purpose tag for distance-tie draws derived off a caller's stream
TIE_TAG = 7


@dataclass(frozen=True)
class NeighborSet:
    """k reference rows ordered by non-decreasing distance to the query.

    ``clamped`` flags queries that asked for more neighbors than the
    reference holds (k was reduced to n).
    """

    indices: np.ndarray
    distances: np.ndarray
    clamped: bool = False

    @property
    def k(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True)
class ClassWeights:
    """Neighbor label frequencies: a simplex vector of multiples of 1/k."""

    weights: np.ndarray


def _tie_matrix(rng: RngStream | None, m: int, n: int) -> np.ndarray:
    """Uniform draws ranking equidistant candidates; zeros when rng is None.

    With no stream, ties fall back to ascending row index (deterministic).
    """
    if rng is None:
        return np.zeros((m, n))
    return rng.child(TIE_TAG).generator().random((m, n))


def knn_batch(
    queries: np.ndarray,
    ref: Dataset,
    k: int,
    metric: Metric = Metric(),
    rng: RngStream | None = None,
    tie: np.ndarray | None = None,
):
    """k nearest rows of `ref` for every query row.

    Returns (indices (m, k'), squared distances (m, k'), clamped) with
    k' = min(k, ref.n).  `tie` overrides the stream-derived tie draws; the
    resampler passes its own so a replay oracle can reproduce them.
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != ref.p:
        raise UsageError(
            f"query dimension {queries.shape[1]} does not match reference {ref.p}"
        )
    clamped = k > ref.n
    k_eff = min(k, ref.n)
    q = metric.transform(queries)
    r = metric.transform(ref.features)
    if tie is None:
        tie = _tie_matrix(rng, queries.shape[0], ref.n)
    idx, d2 = _kernels.knn_query(q, r, k_eff, tie)
    return idx, d2, clamped


def k_nearest(
    query,
    ref: Dataset,
    k: int,
    metric: Metric = Metric(),
    rng: RngStream | None = None,
) -> NeighborSet:
    """Exact k-nearest-neighbor query; distance ties are broken by `rng`."""
    idx, d2, clamped = knn_batch(np.asarray(query, dtype=np.float64), ref, k, metric, rng)
    return NeighborSet(idx[0], np.sqrt(d2[0]), clamped)


def class_weights(
    query,
    ref: Dataset,
    k: int,
    metric: Metric = Metric(),
    rng: RngStream | None = None,
) -> ClassWeights:
    """Label frequencies among the query's k nearest labeled reference rows."""
    labels = ref.require_labels()
    ns = k_nearest(query, ref, k, metric, rng)
    counts = np.bincount(labels[ns.indices], minlength=ref.n_classes + 1)[1:]
    return ClassWeights(counts / float(ns.k))


def label_counts(idx: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-query neighbor label counts (m, L) from a (m, k) index matrix."""
    onehot = np.zeros((n_classes + 1, n_classes), dtype=np.int64)
    onehot[1:] = np.eye(n_classes, dtype=np.int64)
    return onehot[labels[idx]].sum(axis=1)
