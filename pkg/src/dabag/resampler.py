"""Iterative nearest-neighbor stratified bootstrap resampling.

One replicate reshapes a labeled training set toward the class mix of an
unlabeled test set: each test point contributes ``per_test_draws`` rows drawn
from the classes of its k nearest neighbors in the current resampled set.
Iterating this step drives the class proportions to the test proportions.

RNG discipline: replicate ``b`` owns the caller stream's child ``b``; within
a replicate, iteration ``t`` (1-based) owns child ``t`` and consumes, in
order, the neighbor tie draws (m x n), the class-pick uniforms (m x R) and
the row-pick uniforms (m x R).  A replay oracle can regenerate all three
arrays from the same stream and reproduce every draw; results are therefore
identical under any execution order or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .core import (
    ConfigError,
    Dataset,
    InternalError,
    Metric,
    RngStream,
    check_same_dim,
    class_proportions,
)
from .neighbors import knn_batch, label_counts

STOP_THRESHOLD = "threshold"
STOP_T_MAX = "t_max"


@dataclass(frozen=True)
class ResampleConfig:
    """Knobs of one resampling replicate.

    ``per_test_draws`` defaults to ceil(n/m) at run time.  ``k=1`` (single
    nearest neighbor) is the default; the bundled toy config uses k=5.
    """

    k: int = 1
    per_test_draws: int | None = None
    eps_stop: float = 0.01
    t_max: int = 50
    metric: Metric = field(default_factory=Metric)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.per_test_draws is not None and self.per_test_draws < 1:
            raise ConfigError("per_test_draws must be >= 1")
        if not self.eps_stop > 0:
            raise ConfigError("eps_stop must be > 0")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")

    def draws_for(self, n_train: int, n_test: int) -> int:
        if self.per_test_draws is not None:
            return self.per_test_draws
        return max(1, ceil(n_train / n_test))


@dataclass(frozen=True)
class ResampleTrace:
    """Per-iteration class proportions and why the iteration stopped."""

    proportions: np.ndarray  # (iterations_run, L)
    iterations_run: int
    stopped_by: str

    def __post_init__(self):
        if self.proportions.shape[0] != self.iterations_run:
            raise InternalError("trace length does not match iterations_run")


def inn_step(
    current: Dataset,
    test: Dataset,
    cfg: ResampleConfig,
    rng: RngStream,
    pool: Dataset | None = None,
) -> Dataset:
    """One nearest-neighbor stratified bootstrap pass.

    For each test point: count labels among its k nearest rows of `current`,
    draw `per_test_draws` classes from those frequencies, then draw one row
    uniformly (with replacement) from the chosen class of `pool` (`current`
    itself by default).  The output stacks the draws test-point by
    test-point, so its size is exactly m * per_test_draws.

    `inn_resample` passes the original training set as `pool` so that class-
    conditional samples stay draws from the raw training rows across
    iterations instead of degenerating onto an ever-smaller multiset; the
    class-proportion dynamics are identical either way.
    """
    labels = current.require_labels()
    check_same_dim(current, test)
    if pool is None:
        pool = current
    pool_labels = pool.require_labels()
    check_same_dim(pool, test)
    m, n = test.n, current.n
    n_classes = current.n_classes
    draws = cfg.draws_for(pool.n, m)
    k_eff = min(cfg.k, n)

    gen = rng.generator()
    tie = gen.random((m, n))
    u_cls = gen.random((m, draws))
    u_row = gen.random((m, draws))

    idx, _, _ = knn_batch(test.features, current, k_eff, cfg.metric, tie=tie)
    counts = label_counts(idx, labels, n_classes)  # (m, L) of neighbor labels

    # class pick: first class whose cumulative neighbor count exceeds u * k
    bounds = np.cumsum(counts, axis=1)  # integer, last column == k_eff
    cls = (u_cls[:, :, None] * k_eff >= bounds[:, None, :]).sum(axis=2)
    cls = np.minimum(cls, n_classes - 1)

    # row pick: uniform with replacement within the chosen class of the pool
    order = np.argsort(pool_labels, kind="stable")
    class_sizes = np.bincount(pool_labels, minlength=n_classes + 1)[1:]
    offsets = np.concatenate([[0], np.cumsum(class_sizes)])
    sizes = class_sizes[cls]
    if np.any(sizes < 1):
        raise InternalError("a class with positive neighbor weight is empty")
    within = np.minimum((u_row * sizes).astype(np.int64), sizes - 1)
    rows = order[offsets[cls] + within]

    return pool.subset(rows.reshape(-1))


def inn_resample(
    train: Dataset,
    test: Dataset,
    cfg: ResampleConfig,
    rng: RngStream,
) -> tuple[Dataset, ResampleTrace]:
    """Iterate `inn_step` until class proportions settle or t_max is hit.

    Stops after iteration T once every class proportion moved by less than
    ``eps_stop`` relative to the previous iterate (the training set counts as
    iterate zero).  Hitting ``t_max`` is recorded, not raised.
    """
    prev = class_proportions(train)
    current = train
    history = []
    stopped_by = STOP_T_MAX
    for t in range(1, cfg.t_max + 1):
        current = inn_step(current, test, cfg, rng.child(t), pool=train)
        props = class_proportions(current)
        history.append(props)
        if np.max(np.abs(props - prev)) < cfg.eps_stop:
            stopped_by = STOP_THRESHOLD
            break
        prev = props
    trace = ResampleTrace(np.asarray(history), len(history), stopped_by)
    return current, trace


def resample_batch(
    train: Dataset,
    test: Dataset,
    cfg: ResampleConfig,
    b: int,
    master_rng: RngStream,
    threads: int = 1,
) -> list[tuple[Dataset, ResampleTrace]]:
    """B independent replicates; replicate i runs on stream child(i), 1-based.

    Output order and content do not depend on `threads`.
    """
    if b < 1:
        raise ConfigError(f"B must be >= 1, got {b}")

    def one(i: int):
        return inn_resample(train, test, cfg, master_rng.child(i))

    if threads <= 1 or b == 1:
        return [one(i) for i in range(1, b + 1)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(1, b + 1)))
