"""Domain-adaptive and classical bagging with majority voting.

Stream layout within a config stream ``rng``: replicate ``i`` (1-based) owns
``rng.child(i)``; its resampling iterations consume ``rng.child(i, t)`` for
t >= 1, and its auxiliary draws nest under ``rng.child(i, 0)``: fit, vote
ties, classical bootstrap indices.  Replicates are therefore reproducible
under any parallel schedule.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifiers import ClassifierSpec, fit
from .core import ConfigError, Dataset, RngStream, UsageError
from .resampler import ResampleConfig, ResampleTrace, inn_resample

MODE_DA = "domain_adaptive"
MODE_CLASSICAL = "classical_bootstrap"
_MODE_ALIASES = {"da": MODE_DA, "classical": MODE_CLASSICAL}

_FIT = 0
_PREDICT = 1
_BOOT = 2


@dataclass(frozen=True)
class DaBaggingConfig:
    """Ensemble size, resampling mode and the shared base classifier.

    ``b=50`` is the desk-scale default; the bundled full-scale configs use 500.
    ``feature_fraction`` grows each member on its own random feature subset
    (random-forest style bagging over trees).
    """

    b: int = 50
    mode: str = MODE_DA
    base: ClassifierSpec = field(default_factory=ClassifierSpec)
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    feature_fraction: float | None = None

    def __post_init__(self):
        if self.b < 1:
            raise ConfigError(f"B must be >= 1, got {self.b}")
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        if mode not in {MODE_DA, MODE_CLASSICAL}:
            raise ConfigError(f"unknown bagging mode: {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.feature_fraction is not None and not 0 < self.feature_fraction <= 1:
            raise ConfigError("feature_fraction must be in (0, 1]")


class EnsembleModel:
    """B fitted members plus the voting machinery.

    Member predictions for a given evaluation matrix are cached, so vote
    fractions and error curves over the same points never refit or re-predict.
    """

    def __init__(self, members, traces, config, n_classes, p, rng, feature_idx=None):
        self.members = members
        self.traces = traces
        self.config = config
        self.n_classes = n_classes
        self.p = p
        self._rng = rng
        self._feature_idx = feature_idx
        self._cache: dict = {}

    @property
    def b(self) -> int:
        return len(self.members)

    def _member_rng(self, i: int) -> RngStream:
        return self._rng.child(i + 1, 0, _PREDICT)

    def member_predictions(self, x) -> np.ndarray:
        """(B, m) matrix of member labels for the rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        key = hashlib.sha256(x.tobytes()).hexdigest()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = np.empty((self.b, x.shape[0]), dtype=np.int64)
        for i, member in enumerate(self.members):
            cols = self._feature_idx[i] if self._feature_idx is not None else None
            xi = x if cols is None else x[:, cols]
            out[i] = member.predict_batch(xi, self._member_rng(i))
        self._cache[key] = out
        return out

    def vote_counts(self, x) -> np.ndarray:
        """(m, L) member vote tallies."""
        preds = self.member_predictions(x)
        onehot = np.zeros((self.n_classes + 1, self.n_classes), dtype=np.int64)
        onehot[1:] = np.eye(self.n_classes, dtype=np.int64)
        return onehot[preds].sum(axis=0)

    def vote_fractions(self, x) -> np.ndarray:
        return self.vote_counts(x) / float(self.b)

    def predict_batch(self, x) -> np.ndarray:
        """Majority label per row; vote ties go to the smallest class index."""
        return np.argmax(self.vote_counts(x), axis=1).astype(np.int64) + 1


def fit_ensemble(
    train: Dataset,
    test_features: Dataset | None,
    cfg: DaBaggingConfig,
    rng: RngStream,
    threads: int = 1,
) -> EnsembleModel:
    """Fit B members on domain-adaptive or classical bootstrap replicates.

    Domain-adaptive mode resamples `train` toward `test_features` before each
    fit; classical mode draws plain n-out-of-n bootstraps and ignores the test
    set entirely.
    """
    train.require_labels()
    if cfg.mode == MODE_DA:
        if test_features is None or test_features.n < 1:
            raise UsageError("domain-adaptive mode requires a non-empty test set")
        test_features = test_features.without_labels()

    n_feat = train.p
    feature_idx = None
    if cfg.feature_fraction is not None:
        n_keep = max(1, int(round(cfg.feature_fraction * n_feat)))
        feature_idx = [
            np.sort(rng.child(i + 1, 0, 3).generator().choice(n_feat, n_keep, replace=False))
            for i in range(cfg.b)
        ]

    def one(i: int):
        rep = rng.child(i + 1)
        if cfg.mode == MODE_DA:
            data, trace = inn_resample(train, test_features, cfg.resample, rep)
        else:
            gen = rep.child(0, _BOOT).generator()
            data = train.subset(gen.integers(0, train.n, train.n))
            trace = None
        if feature_idx is not None:
            # subsampled columns no longer align with the metric's scaling
            data = Dataset(
                data.features[:, feature_idx[i]], data.labels, data.n_classes
            )
            member = fit(cfg.base, data, rep.child(0, _FIT))
        else:
            member = fit(cfg.base, data, rep.child(0, _FIT), metric=cfg.resample.metric)
        return member, trace

    if threads <= 1 or cfg.b == 1:
        results = [one(i) for i in range(cfg.b)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(cfg.b)))

    members = [m for m, _ in results]
    traces = [t for _, t in results] if cfg.mode == MODE_DA else None
    return EnsembleModel(
        members, traces, cfg, train.n_classes, train.p, rng, feature_idx
    )


def vote_fraction(model: EnsembleModel, x, rng: RngStream | None = None) -> np.ndarray:
    """Fraction of members voting each class for a single point."""
    return model.vote_fractions(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]


def predict_ensemble(model: EnsembleModel, x, rng: RngStream | None = None) -> int:
    """Majority-vote label for a single point (ties: smallest class index)."""
    return int(model.predict_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0])


def variance_vs_b(
    train: Dataset,
    test: Dataset,
    cfg: DaBaggingConfig,
    b_grid,
    n_rep: int,
    rng: RngStream,
    threads: int = 1,
) -> list[dict]:
    """Mean and variance of the test error across ensemble randomizations.

    Data stay fixed; only the replicate randomness varies.  Each repetition
    fits one pool of max(b_grid) members and evaluates its first-B prefixes,
    which are valid size-B ensembles because members are i.i.d.  Variance is
    reported as None when n_rep == 1.
    """
    b_grid = sorted(int(b) for b in b_grid)
    if not b_grid or b_grid[0] < 1:
        raise UsageError("b_grid must contain positive ensemble sizes")
    if sorted(set(b_grid)) != b_grid:
        raise UsageError("b_grid must be strictly ascending")
    truth = test.require_labels()
    b_max = b_grid[-1]
    pool_cfg = DaBaggingConfig(
        b=b_max,
        mode=cfg.mode,
        base=cfg.base,
        resample=cfg.resample,
        feature_fraction=cfg.feature_fraction,
    )

    errors = np.empty((n_rep, len(b_grid)))
    for r in range(n_rep):
        model = fit_ensemble(
            train, test.without_labels(), pool_cfg, rng.child(r + 1), threads=threads
        )
        preds = model.member_predictions(test.features)  # (b_max, m)
        onehot = np.zeros((model.n_classes + 1, model.n_classes), dtype=np.int64)
        onehot[1:] = np.eye(model.n_classes, dtype=np.int64)
        cum = np.cumsum(onehot[preds], axis=0)  # (b_max, m, L)
        for col, b in enumerate(b_grid):
            labels = np.argmax(cum[b - 1], axis=1) + 1
            errors[r, col] = float(np.mean(labels != truth))

    rows = []
    for col, b in enumerate(b_grid):
        var = float(np.var(errors[:, col], ddof=1)) if n_rep > 1 else None
        rows.append({"b": b, "mean_error": float(errors[:, col].mean()), "var_error": var})
    return rows
