"""Metrics and experiment orchestration.

``run_experiment`` crosses scenario points with method configs over repeated
seeds: generate, optionally screen anomalies, fit, predict, score.  Data
draws are shared across methods within a (scenario, rep) cell so method
comparisons are paired.  Cells run on a bounded thread pool; every cell owns
a derived stream, so results are identical for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anomaly import AnomalyConfig, calibrate, filter_anomalies
from .classifiers import ClassifierSpec, bayes_risk, fit
from .core import ConfigError, Dataset, Metric, RngStream, UsageError
from .ensemble import DaBaggingConfig, fit_ensemble
from .resampler import ResampleConfig
from .simgen import ScenarioSpec, generate


def test_error(predictions, truth) -> float:
    """Misclassification fraction."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or predictions.size == 0:
        raise UsageError("predictions and truth must be equal-length, non-empty")
    return float(np.mean(predictions != truth))


def accuracy(predictions, truth) -> float:
    return 1.0 - test_error(predictions, truth)


def type_i_and_power(flags, truth_flags) -> tuple[float | None, float | None]:
    """(false-flag rate among inliers, detection rate among outliers).

    A rate is None when its group is empty.
    """
    flags = np.asarray(flags, dtype=bool)
    truth_flags = np.asarray(truth_flags, dtype=bool)
    if flags.shape != truth_flags.shape:
        raise UsageError("flags and truth_flags must have equal length")
    inliers = ~truth_flags
    type_i = float(flags[inliers].mean()) if inliers.any() else None
    power = float(flags[truth_flags].mean()) if truth_flags.any() else None
    return type_i, power


MODE_NONE = "none"


@dataclass(frozen=True)
class MethodSpec:
    """A tagged prediction pipeline: bagging mode (or none) plus base spec."""

    tag: str
    mode: str = "da"  # da | classical | none
    base: ClassifierSpec = field(default_factory=ClassifierSpec)
    b: int = 50
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    feature_fraction: float | None = None

    def __post_init__(self):
        if self.mode not in {"da", "classical", MODE_NONE}:
            raise ConfigError(f"unknown method mode: {self.mode!r}")

    def bagging_config(self) -> DaBaggingConfig:
        return DaBaggingConfig(
            b=self.b,
            mode=self.mode,
            base=self.base,
            resample=self.resample,
            feature_fraction=self.feature_fraction,
        )


@dataclass(frozen=True)
class ExperimentRecord:
    scenario: str
    method: str
    rep: int
    seed: int
    accuracy: float | None
    error: float | None
    type_i: float | None
    power: float | None
    runtime_s: float


@dataclass(frozen=True)
class CellFailure:
    scenario: str
    method: str
    rep: int
    message: str


@dataclass
class ExperimentResult:
    records: list[ExperimentRecord]
    failures: list[CellFailure]

    def aggregate(self) -> list[dict]:
        """Mean and sd per (scenario, method), recomputed from the records."""
        groups: dict[tuple[str, str], list[ExperimentRecord]] = {}
        order = []
        for rec in self.records:
            key = (rec.scenario, rec.method)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(rec)

        def stats(values):
            vals = [v for v in values if v is not None]
            if not vals:
                return None, None
            arr = np.asarray(vals, dtype=np.float64)
            sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            return float(arr.mean()), sd

        rows = []
        for scenario, method in order:
            recs = groups[(scenario, method)]
            acc_m, acc_s = stats(r.accuracy for r in recs)
            t1_m, t1_s = stats(r.type_i for r in recs)
            pw_m, pw_s = stats(r.power for r in recs)
            rows.append(
                {
                    "scenario": scenario,
                    "method": method,
                    "reps": len(recs),
                    "accuracy_mean": acc_m,
                    "accuracy_sd": acc_s,
                    "type_i_mean": t1_m,
                    "type_i_sd": t1_s,
                    "power_mean": pw_m,
                    "power_sd": pw_s,
                    "runtime_mean_s": float(np.mean([r.runtime_s for r in recs])),
                }
            )
        return rows


def _predict_method(
    method: MethodSpec,
    train: Dataset,
    test_features: Dataset,
    rng: RngStream,
    metric: Metric,
    threads: int,
) -> np.ndarray:
    if method.mode == MODE_NONE:
        model = fit(method.base, train, rng.child(0), metric=metric)
        return model.predict_batch(test_features.features, rng.child(1))
    model = fit_ensemble(train, test_features, method.bagging_config(), rng, threads=threads)
    return model.predict_batch(test_features.features)


def _run_cell(
    spec: ScenarioSpec,
    methods: list[MethodSpec],
    rep: int,
    cell_rng: RngStream,
    anomaly: AnomalyConfig | None,
    metric: Metric,
    standardize: bool,
):
    records = []
    failures = []
    gt = generate(spec, cell_rng.child(0))
    if standardize:
        metric = Metric.standardized(gt.train)

    kept = np.arange(gt.test.n)
    type_i = power = None
    if anomaly is not None:
        cal = calibrate(gt.train, anomaly, cell_rng.child(1), metric)
        kept, flagged = filter_anomalies(gt.test, gt.train, cal, metric)
        mask = np.zeros(gt.test.n, dtype=bool)
        mask[flagged] = True
        type_i, power = type_i_and_power(mask, gt.anomaly_mask)

    kept_truth = gt.test_labels[kept]
    scored = kept_truth > 0  # surviving true anomalies carry no label
    test_features = gt.test.subset(kept).without_labels() if kept.size else None

    for mi, method in enumerate(methods):
        start = time.perf_counter()
        try:
            if test_features is None or not scored.any():
                acc = err = None
            else:
                preds = _predict_method(
                    method, gt.train, test_features, cell_rng.child(2 + mi), metric, 1
                )
                err = test_error(preds[scored], kept_truth[scored])
                acc = 1.0 - err
            records.append(
                ExperimentRecord(
                    scenario=spec.label,
                    method=method.tag,
                    rep=rep,
                    seed=cell_rng.seed,
                    accuracy=acc,
                    error=err,
                    type_i=type_i,
                    power=power,
                    runtime_s=time.perf_counter() - start,
                )
            )
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            failures.append(CellFailure(spec.label, method.tag, rep, str(exc)))
    return records, failures


def run_experiment(
    scenarios,
    methods,
    reps: int,
    rng: RngStream,
    anomaly: AnomalyConfig | None = None,
    metric: Metric = Metric(),
    threads: int = 1,
    standardize: bool = False,
) -> ExperimentResult:
    """Full factorial over scenarios x methods x reps.

    Cell (si, rep) draws its data from ``rng.child(si, rep)``; method mi adds
    child ``2 + mi``.  Per-cell failures are recorded and the run continues.
    """
    scenarios = list(scenarios)
    methods = list(methods)
    if not scenarios or not methods or reps < 1:
        raise UsageError("need at least one scenario, one method and one rep")
    tags = [m.tag for m in methods]
    if len(set(tags)) != len(tags):
        raise ConfigError("method tags must be unique")

    cells = [(si, rep) for si in range(len(scenarios)) for rep in range(reps)]

    def one(cell):
        si, rep = cell
        return _run_cell(
            scenarios[si], methods, rep, rng.child(si, rep), anomaly, metric, standardize
        )

    if threads <= 1 or len(cells) == 1:
        results = [one(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, cells))

    records: list[ExperimentRecord] = []
    failures: list[CellFailure] = []
    for recs, fails in results:
        records.extend(recs)
        failures.extend(fails)
    return ExperimentResult(records, failures)


@dataclass(frozen=True)
class ExcessRiskReport:
    """Both sides of the ensemble-vs-single excess risk comparison."""

    excess_ensemble: float
    excess_single: float
    bayes: float
    bayes_se: float
    margin: float  # mean of (ensemble error - 2 * single error + bayes)
    margin_se: float
    holds: bool  # margin <= 3 * margin_se


def excess_risk_check(
    spec: ScenarioSpec,
    base: ClassifierSpec,
    b: int,
    reps: int,
    rng: RngStream,
    n_mc: int = 100_000,
    resample: ResampleConfig | None = None,
) -> ExcessRiskReport:
    """Estimate ensemble excess risk against twice the single-replicate one.

    Everything is averaged jointly over data draws and replicate randomness;
    the margin's standard error comes from per-rep batching.
    """
    if len(spec.q) != 2:
        raise UsageError("excess risk check needs a two-class scenario")
    cfg = DaBaggingConfig(b=b, base=base, resample=resample or ResampleConfig())
    diffs = np.empty(reps)
    ens_err = np.empty(reps)
    single_err = np.empty(reps)
    bayes_vals = np.empty(reps)
    bayes_ses = np.empty(reps)
    for r in range(reps):
        gt = generate(spec, rng.child(r, 0))
        model = fit_ensemble(gt.train, gt.test.without_labels(), cfg, rng.child(r, 1))
        truth = gt.test_labels
        preds = model.member_predictions(gt.test.features)
        member_err = np.mean(preds != truth[None, :], axis=1)
        ens = model.predict_batch(gt.test.features)
        bayes_vals[r], bayes_ses[r] = bayes_risk(gt.oracle, n_mc, rng.child(r, 2))
        ens_err[r] = test_error(ens, truth)
        single_err[r] = float(member_err.mean())
        diffs[r] = ens_err[r] - 2.0 * single_err[r] + bayes_vals[r]
    bayes_mean = float(bayes_vals.mean())
    margin = float(diffs.mean())
    margin_se = float(diffs.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float(bayes_ses[0])
    return ExcessRiskReport(
        excess_ensemble=float(ens_err.mean()) - bayes_mean,
        excess_single=float(single_err.mean()) - bayes_mean,
        bayes=bayes_mean,
        bayes_se=float(np.sqrt(np.mean(bayes_ses**2) / reps)),
        margin=margin,
        margin_se=margin_se,
        holds=margin <= 3.0 * margin_se,
    )
