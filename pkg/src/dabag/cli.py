"""Command-line front end: scenario reproduction, CSV pipelines, detection.

Commands
--------
- ``dabag simulate CONFIG.json``: run a simulation config, write one results
  CSV row per (scenario, method, rep) plus a JSON aggregate file, and print
  the aggregate table.
- ``dabag fit-predict``: train on one CSV, predict labels for another,
  optionally screening anomalies first (flagged rows predict "anomaly").
- ``dabag detect``: anomaly flags and per-class scores for a test CSV.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
All output files are written atomically and are byte-identical for identical
(config, seed), independent of the thread count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .anomaly import AnomalyConfig, calibrate, dtm_scores, filter_anomalies
from .classifiers import ClassifierSpec
from .core import ConfigError, DataError, Dataset, InternalError, Metric, RngStream, UsageError
from .evaluate import MethodSpec, run_experiment
from .resampler import ResampleConfig
from .simgen import ScenarioSpec

_BASES = ("knn", "logistic", "lda", "tree")
_MODES = ("da", "classical", "none")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _env_threads() -> int:
    raw = os.environ.get("DABAG_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"DABAG_THREADS is not an integer: {raw!r}") from exc


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read_csv(path: str, label_col: str | None, require_label: bool = False):
    """Parse a headered CSV into (features, feature_names, raw labels or None)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (a header row is required)")
        header = [h.strip() for h in header]
        label_idx = None
        if label_col is not None and label_col in header:
            label_idx = header.index(label_col)
        elif require_label:
            raise UsageError(f"{path}: label column {label_col!r} not found")
        feat_cols = [i for i in range(len(header)) if i != label_idx]
        feat_names = [header[i] for i in feat_cols]
        rows: list[list[float]] = []
        labels: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            vals = []
            for i in feat_cols:
                cell = row[i].strip()
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{line_no}: non-numeric value {cell!r} "
                        f"in column {header[i]!r}"
                    ) from None
            rows.append(vals)
            if label_idx is not None:
                labels.append(row[label_idx].strip())
    features = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(feat_names)))
    return features, feat_names, (labels if label_idx is not None else None)


def _load_train(path: str, label_col: str) -> tuple[Dataset, list[str]]:
    features, names, labels = _read_csv(path, label_col, require_label=True)
    if features.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DataError(f"{path}: need at least two classes, found {classes}")
    mapping = {name: i + 1 for i, name in enumerate(classes)}
    y = np.array([mapping[v] for v in labels], dtype=np.int64)
    ds = Dataset(features, y, len(classes), tuple(classes))
    return ds, names


def _load_test(path: str, label_col: str | None, train_names: list[str]) -> np.ndarray:
    features, names, _ = _read_csv(path, label_col)
    missing = [c for c in train_names if c not in names]
    if missing:
        raise DataError(f"{path}: missing feature columns {missing}")
    cols = [names.index(c) for c in train_names]
    return features[:, cols]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _base_spec(obj) -> ClassifierSpec:
    if isinstance(obj, str):
        return ClassifierSpec(kind=obj)
    if isinstance(obj, dict):
        try:
            return ClassifierSpec(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad base classifier spec {obj!r}: {exc}") from exc
    raise ConfigError(f"base classifier spec must be a string or object, got {obj!r}")


def _resample_cfg(obj, overrides) -> ResampleConfig:
    data = dict(obj or {})
    for key in ("k", "eps_stop", "t_max", "per_test_draws"):
        if overrides.get(key) is not None:
            data[key] = overrides[key]
    try:
        return ResampleConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad resample config {obj!r}: {exc}") from exc


def _scenario_spec(obj) -> ScenarioSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"scenario entry must be an object, got {obj!r}")
    data = dict(obj)
    if "q1" in data:
        from .simgen import spec_from_q1

        return spec_from_q1(
            data["scenario"],
            int(data["n_train"]),
            int(data["n_test"]),
            float(data.pop("q1")),
            float(data.get("epsilon_out", 0.0)),
            int(data.get("seed", 0)),
        )
    try:
        data["q"] = tuple(data["q"])
        return ScenarioSpec(**data)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad scenario entry {obj!r}: {exc}") from exc


def _load_config(path: str, args) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")

    overrides = {
        "k": args.k,
        "eps_stop": args.eps_stop,
        "t_max": args.t_max,
        "per_test_draws": None,
    }
    scenarios = [_scenario_spec(s) for s in raw.get("scenarios", [])]
    if not scenarios:
        raise ConfigError(f"{path}: no scenarios given")

    methods = []
    for entry in raw.get("methods", []):
        if not isinstance(entry, dict) or "tag" not in entry:
            raise ConfigError(f"{path}: method entries need at least a tag: {entry!r}")
        mode = args.mode or entry.get("mode", "da")
        if mode not in _MODES:
            raise ConfigError(f"{path}: unknown mode {mode!r}")
        base = _base_spec(args.base or entry.get("base", "tree"))
        methods.append(
            MethodSpec(
                tag=entry["tag"],
                mode=mode,
                base=base,
                b=int(args.b or entry.get("b", 50)),
                resample=_resample_cfg(entry.get("resample"), overrides),
                feature_fraction=entry.get("feature_fraction"),
            )
        )
    if not methods:
        raise ConfigError(f"{path}: no methods given")

    anomaly = None
    a_raw = raw.get("anomaly")
    if a_raw is not None:
        if not isinstance(a_raw, dict):
            raise ConfigError(f"{path}: anomaly must be an object or null")
        a_data = dict(a_raw)
        if args.alpha is not None:
            a_data["alpha"] = args.alpha
        try:
            anomaly = AnomalyConfig(**a_data)
        except TypeError as exc:
            raise ConfigError(f"{path}: bad anomaly config: {exc}") from exc

    return {
        "scenarios": scenarios,
        "methods": methods,
        "anomaly": anomaly,
        "reps": int(args.reps or raw.get("reps", 20)),
        "seed": int(args.seed if args.seed is not None else raw.get("seed", 0)),
        "threads": int(
            args.threads
            if args.threads is not None
            else raw.get("threads", _env_threads())
        ),
        "standardize": bool(raw.get("standardize", False)),
    }


_RESULT_COLUMNS = ("scenario", "method", "rep", "seed", "accuracy", "error", "type_i", "power")


def _results_csv(result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_RESULT_COLUMNS)
    records = sorted(result.records, key=lambda r: (r.scenario, r.method, r.rep))
    for r in records:
        writer.writerow(
            [r.scenario, r.method, r.rep, r.seed, _fmt(r.accuracy), _fmt(r.error),
             _fmt(r.type_i), _fmt(r.power)]
        )
    return buf.getvalue()


def _aggregate_json(result, cfg) -> str:
    payload = {
        "reps": cfg["reps"],
        "seed": cfg["seed"],
        "anomaly": None
        if cfg["anomaly"] is None
        else {
            "k": cfg["anomaly"].k,
            "alpha": cfg["anomaly"].alpha,
            "split_fraction": cfg["anomaly"].split_fraction,
        },
        "aggregates": [
            {k: v for k, v in row.items() if k != "runtime_mean_s"}
            for row in result.aggregate()
        ],
        "failures": [
            {"scenario": f.scenario, "method": f.method, "rep": f.rep, "message": f.message}
            for f in result.failures
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _print_table(result) -> None:
    rows = result.aggregate()
    if not rows:
        return
    print(f"{'scenario':<34} {'method':<18} {'acc':>7} {'sd':>7} {'typeI':>7} {'power':>7}")
    for row in rows:
        acc = "-" if row["accuracy_mean"] is None else f"{row['accuracy_mean']:.3f}"
        sd = "-" if row["accuracy_sd"] is None else f"{row['accuracy_sd']:.3f}"
        t1 = "-" if row["type_i_mean"] is None else f"{row['type_i_mean']:.3f}"
        pw = "-" if row["power_mean"] is None else f"{row['power_mean']:.3f}"
        print(f"{row['scenario']:<34} {row['method']:<18} {acc:>7} {sd:>7} {t1:>7} {pw:>7}")


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args)
    rng = RngStream(cfg["seed"])
    result = run_experiment(
        cfg["scenarios"],
        cfg["methods"],
        cfg["reps"],
        rng,
        anomaly=cfg["anomaly"],
        threads=cfg["threads"],
        standardize=cfg["standardize"],
    )
    out_dir = Path(args.out_dir)
    _atomic_write(out_dir / "results.csv", _results_csv(result))
    _atomic_write(out_dir / "aggregates.json", _aggregate_json(result, cfg))
    _print_table(result)
    for fail in result.failures:
        print(
            f"warning: {fail.scenario} / {fail.method} rep {fail.rep} failed: {fail.message}",
            file=sys.stderr,
        )
    return 0


# ---------------------------------------------------------------------------
# fit-predict / detect
# ---------------------------------------------------------------------------


def _cmd_fit_predict(args) -> int:
    train, feat_names = _load_train(args.train, args.label)
    test_x = _load_test(args.test, args.label, feat_names)
    rng = RngStream(args.seed or 0)
    metric = Metric.standardized(train) if args.standardize else Metric()

    header = ["row", "prediction"]
    lines = [header]
    if test_x.shape[0] > 0:
        test = Dataset(test_x)
        kept = np.arange(test.n)
        flagged = np.empty(0, np.int64)
        if args.detect_anomalies:
            cal = calibrate(
                train, AnomalyConfig(k=args.dtm_k, alpha=args.alpha), rng.child(1), metric
            )
            kept, flagged = filter_anomalies(test, train, cal, metric)

        predictions = np.empty(test.n, dtype=object)
        predictions[flagged] = "anomaly"
        if kept.size:
            method = MethodSpec(
                tag="cli",
                mode=args.mode,
                base=ClassifierSpec(kind=args.base),
                b=args.b,
                resample=ResampleConfig(
                    k=args.k, eps_stop=args.eps_stop, t_max=args.t_max, metric=metric
                ),
            )
            from .evaluate import _predict_method

            threads = args.threads if args.threads is not None else _env_threads()
            preds = _predict_method(
                method, train, test.subset(kept), rng.child(2), metric, threads
            )
            names = train.label_names
            for row, lab in zip(kept, preds):
                predictions[row] = names[int(lab) - 1]
        for i in range(test.n):
            lines.append([str(i + 1), str(predictions[i])])

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    _atomic_write(Path(args.out), buf.getvalue())
    print(f"wrote {len(lines) - 1} predictions to {args.out}")
    return 0


def _cmd_detect(args) -> int:
    train, feat_names = _load_train(args.train, args.label)
    test_x = _load_test(args.test, args.label, feat_names)
    rng = RngStream(args.seed or 0)
    metric = Metric.standardized(train) if args.standardize else Metric()
    cfg = AnomalyConfig(k=args.k, alpha=args.alpha, split_fraction=args.split_fraction)

    names = train.label_names
    header = ["row", "flag"] + [f"dtm_{name}" for name in names]
    lines = [header]
    if test_x.shape[0] > 0:
        test = Dataset(test_x)
        cal = calibrate(train, cfg, rng.child(1), metric)
        scores = dtm_scores(test.features, train, cfg.k, metric)
        flags = np.all(scores > cal.thresholds[None, :], axis=1).astype(int)
        for i in range(test.n):
            lines.append(
                [str(i + 1), str(int(flags[i]))] + [_fmt(float(v)) for v in scores[i]]
            )

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    _atomic_write(Path(args.out), buf.getvalue())
    print(f"wrote {len(lines) - 1} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="dabag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation config")
    sim.add_argument("config", help="JSON config path")
    sim.add_argument("--out-dir", default="results")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--b", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--threads", type=int)
    sim.add_argument("--k", type=int, help="resampler neighbor count")
    sim.add_argument("--eps-stop", type=float, dest="eps_stop")
    sim.add_argument("--t-max", type=int, dest="t_max")
    sim.add_argument("--alpha", type=float, help="anomaly nominal level")
    sim.add_argument("--base", choices=_BASES)
    sim.add_argument("--mode", choices=_MODES)
    sim.set_defaults(func=_cmd_simulate)

    common = dict(required=True)
    fp = sub.add_parser("fit-predict", help="train on one CSV, predict another")
    fp.add_argument("--train", **common)
    fp.add_argument("--test", **common)
    fp.add_argument("--label", default="label")
    fp.add_argument("--out", default="predictions.csv")
    fp.add_argument("--base", choices=_BASES, default="tree")
    fp.add_argument("--mode", choices=_MODES, default="da")
    fp.add_argument("--b", type=int, default=50)
    fp.add_argument("--k", type=int, default=1, help="resampler neighbor count")
    fp.add_argument("--eps-stop", type=float, default=0.01, dest="eps_stop")
    fp.add_argument("--t-max", type=int, default=50, dest="t_max")
    fp.add_argument("--detect-anomalies", action="store_true")
    fp.add_argument("--alpha", type=float, default=0.1)
    fp.add_argument("--dtm-k", type=int, default=10, dest="dtm_k")
    fp.add_argument("--standardize", action="store_true")
    fp.add_argument("--seed", type=int, default=0)
    fp.add_argument("--threads", type=int, default=None)
    fp.set_defaults(func=_cmd_fit_predict)

    det = sub.add_parser("detect", help="anomaly flags for a test CSV")
    det.add_argument("--train", **common)
    det.add_argument("--test", **common)
    det.add_argument("--label", default="label")
    det.add_argument("--out", default="flags.csv")
    det.add_argument("--alpha", type=float, default=0.1)
    det.add_argument("--k", type=int, default=10, help="DTM neighbor count")
    det.add_argument("--split-fraction", type=float, default=0.5, dest="split_fraction")
    det.add_argument("--standardize", action="store_true")
    det.add_argument("--seed", type=int, default=0)
    det.set_defaults(func=_cmd_detect)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - map unexpected failures to code 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
