"""Acceptance gate: one test per criterion, one printed PASS/FAIL line each.

Master seed 0 everywhere; every quantity is pinned here, nothing is deferred
to later calibration.  Two criteria are known to fail at this scale and are
kept red deliberately:

- Criterion 3 sets detection-power targets (0.95 / [0.40, 0.70]) that no
  distance-to-measure configuration reaches on these generators: the outliers
  sit at squared offset 8 from the nearest class component while the within-
  class 10-d scale is ~10-20, so one-class distance scores overlap the inlier
  tail.  An oracle likelihood-ratio detector (which knows the outlier
  density) reaches 0.998/0.90, but the per-class density level-set rule - the
  population limit of this statistic - tops out near 0.05/0.16, and measured
  finite-sample power is ~0.32/0.11.  Size control (criterion 2) passes.
- Criterion 4's q1=1/2 legs compare ensembles whose true accuracy difference
  at no shift is zero to within the Monte Carlo resolution of the pinned
  20-seed budget (~+/-0.003), so the unmargined ">= 0" check is noise-driven;
  the shift legs and the gap-growth property hold reliably.

Both tests run the stated checks verbatim and report the measured values.
"""

import csv
import json
import time

import numpy as np
import pytest

import dabag
from dabag import (
    AnomalyConfig,
    ClassifierSpec,
    Dataset,
    MethodSpec,
    ResampleConfig,
    RngStream,
)
from dabag.neighbors import knn_batch

MASTER = RngStream(0)


def report(num, name, ok, detail):
    flag = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num} [{name}]: {flag} — {detail}")
    return ok


# -----------------------------------------------------------------------
# 1. Resampler distributional convergence
# -----------------------------------------------------------------------


def test_criterion_1_resampler_convergence():
    start = time.perf_counter()
    finals = []
    for seed in range(20):
        rng = RngStream(seed)
        gt = dabag.gen_setting1(500, 500, 0.1, 0.0, rng.child(0))
        out, _ = dabag.inn_resample(
            gt.train, gt.test.without_labels(), ResampleConfig(k=1), rng.child(1)
        )
        finals.append(dabag.class_proportions(out)[0])
    elapsed = time.perf_counter() - start
    mean_p1 = float(np.mean(finals))
    ok = abs(mean_p1 - 0.10) <= 0.05 and elapsed < 60
    assert report(
        1,
        "resampler convergence",
        ok,
        f"mean final class-1 proportion {mean_p1:.4f} (target 0.10±0.05), {elapsed:.1f}s",
    )


# -----------------------------------------------------------------------
# 2 + 3. Anomaly size and power (shared 100-seed runs)
# -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def anomaly_runs():
    start = time.perf_counter()
    out = {}
    for name, gen in (("setting1", dabag.gen_setting1), ("setting2", dabag.gen_setting2)):
        t1s, pws = [], []
        for seed in range(100):
            rng = MASTER.child(2, seed)
            gt = gen(500, 500, 0.5, 0.1, rng.child(0))
            cal = dabag.calibrate(gt.train, AnomalyConfig(k=10, alpha=0.1), rng.child(1))
            _, anomalies = dabag.filter_anomalies(gt.test, gt.train, cal)
            mask = np.zeros(gt.test.n, bool)
            mask[anomalies] = True
            t1, pw = dabag.type_i_and_power(mask, gt.anomaly_mask)
            t1s.append(t1)
            pws.append(pw)
        out[name] = (float(np.mean(t1s)), float(np.mean(pws)))
    out["elapsed"] = time.perf_counter() - start
    return out


def test_criterion_2_anomaly_size(anomaly_runs):
    t1_s1, _ = anomaly_runs["setting1"]
    t1_s2, _ = anomaly_runs["setting2"]
    elapsed = anomaly_runs["elapsed"]
    ok = t1_s1 <= 0.10 and t1_s2 <= 0.10 and elapsed < 300
    assert report(
        2,
        "anomaly size control",
        ok,
        f"type I: setting1 {t1_s1:.4f}, setting2 {t1_s2:.4f} (<= 0.10), {elapsed:.1f}s",
    )


def test_criterion_3_anomaly_power(anomaly_runs):
    _, pw_s1 = anomaly_runs["setting1"]
    _, pw_s2 = anomaly_runs["setting2"]
    ok = pw_s1 >= 0.95 and 0.40 <= pw_s2 <= 0.70
    assert report(
        3,
        "anomaly power",
        ok,
        f"power: setting1 {pw_s1:.4f} (>= 0.95), setting2 {pw_s2:.4f} (in [0.40, 0.70]); "
        "targets exceed what distance-to-measure screening can reach on these "
        "generators (module docstring has the analysis)",
    )


# -----------------------------------------------------------------------
# 4. DA-bagging vs classical bagging under shift
# -----------------------------------------------------------------------


def test_criterion_4_da_beats_classical():
    scenarios = [dabag.spec_from_q1("setting1", 500, 500, q1) for q1 in (1 / 2, 1 / 5, 1 / 10)]
    rs = ResampleConfig(k=1)
    methods = [
        MethodSpec(tag=f"{mode}+{base}", mode=mode, base=ClassifierSpec(base), b=50, resample=rs)
        for base in ("knn", "tree")
        for mode in ("da", "classical")
    ]
    res = dabag.run_experiment(scenarios, methods, reps=20, rng=MASTER, threads=2)
    agg = {(r["scenario"], r["method"]): r["accuracy_mean"] for r in res.aggregate()}
    ok = not res.failures
    details = []
    for base in ("knn", "tree"):
        gaps = [
            agg[(s.label, f"da+{base}")] - agg[(s.label, f"classical+{base}")]
            for s in scenarios
        ]
        base_ok = all(g >= 0 for g in gaps) and gaps[2] > gaps[0]
        ok = ok and base_ok
        details.append(base + " gaps " + "/".join(f"{g:+.4f}" for g in gaps))
    assert report(
        4,
        "DA beats classical under shift",
        ok,
        "; ".join(details) + " (need all >= 0 and gap(1/10) > gap(1/2); the no-shift "
        "legs measure a true difference of ~0 against MC noise of ~0.003)",
    )


# -----------------------------------------------------------------------
# 5. Voting excess-risk inequality
# -----------------------------------------------------------------------


def test_criterion_5_excess_risk_bound():
    rep = dabag.excess_risk_check(
        dabag.spec_from_q1("setting1", 300, 300, 0.2),
        ClassifierSpec("knn"),
        b=20,
        reps=12,
        rng=MASTER.child(5),
        n_mc=100_000,
    )
    assert report(
        5,
        "ensemble excess risk <= 2x single",
        rep.holds,
        f"excess(ensemble) {rep.excess_ensemble:.4f} vs 2x excess(single) "
        f"{2 * rep.excess_single:.4f} + 3SE {3 * rep.margin_se:.4f} "
        f"(bayes {rep.bayes:.4f} from n_mc=1e5)",
    )


# -----------------------------------------------------------------------
# 6. Error variance shrinks like 1/B
# -----------------------------------------------------------------------


def test_criterion_6_variance_vs_b():
    rng = MASTER
    gt = dabag.gen_setting1(250, 250, 0.2, 0.0, rng.child(0))
    test = Dataset(gt.test.features, gt.test_labels, 2)
    cfg = dabag.DaBaggingConfig(b=80, base=ClassifierSpec("knn"), resample=ResampleConfig(k=1))
    rows = dabag.variance_vs_b(gt.train, test, cfg, [10, 20, 40, 80], 48, rng.child(1))
    variances = [r["var_error"] for r in rows]
    ratio = variances[-1] / variances[0]
    nonincreasing = all(a >= b for a, b in zip(variances, variances[1:]))
    ok = nonincreasing and ratio <= 0.5
    assert report(
        6,
        "variance decays with B",
        ok,
        "vars " + "/".join(f"{v:.2e}" for v in variances)
        + f", var(80)/var(10) = {ratio:.3f} (need <= 0.5, non-increasing)",
    )


# -----------------------------------------------------------------------
# 7. Oracle equivalence suites
# -----------------------------------------------------------------------


def test_criterion_7_oracle_suites():
    start = time.perf_counter()
    gen = np.random.default_rng(7)

    # NN search vs exhaustive sort
    for _ in range(100):
        n, p = int(gen.integers(5, 60)), int(gen.integers(1, 10))
        k = int(gen.integers(1, n + 1))
        ref = Dataset(gen.standard_normal((n, p)))
        q = gen.standard_normal(p)
        ns = dabag.k_nearest(q, ref, k)
        d = np.sqrt(((ref.features - q) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")[:k]
        assert set(ns.indices.tolist()) == set(order.tolist())
        assert np.allclose(np.sort(ns.distances), np.sort(d[order]), atol=1e-12)

    # DTM vs exhaustive sort
    for _ in range(100):
        n, p = int(gen.integers(8, 50)), int(gen.integers(1, 8))
        k = int(gen.integers(1, n + 1))
        cls = Dataset(gen.standard_normal((n, p)))
        x = gen.standard_normal(p)
        d2 = np.sort(((cls.features - x) ** 2).sum(axis=1))
        assert dabag.dtm_hat(x, cls, k) == pytest.approx(
            np.sqrt(d2[:k].mean()), abs=1e-12
        )

    # vote tallies vs per-member brute force
    gt = dabag.gen_setting1(100, 100, 0.3, 0.0, RngStream(70).child(0))
    model = dabag.fit_ensemble(
        gt.train,
        gt.test.without_labels(),
        dabag.DaBaggingConfig(b=9, base=ClassifierSpec("knn", knn_k=3), resample=ResampleConfig(k=1)),
        RngStream(70).child(1),
    )
    pts = gen.standard_normal((100, 10))
    counts = model.vote_counts(pts)
    member = model.member_predictions(pts)
    for j in range(100):
        tally = np.zeros(2, np.int64)
        for b in range(9):
            tally[member[b, j] - 1] += 1
        assert np.array_equal(counts[j], tally)

    # tree traversal vs independent walker
    for _ in range(100):
        n, p = int(gen.integers(20, 100)), int(gen.integers(1, 5))
        feats = gen.standard_normal((n, p))
        labels = gen.integers(1, 3, n)
        model_t = dabag.fit(ClassifierSpec("tree"), Dataset(feats, labels), RngStream(71))
        for x in gen.standard_normal((20, p)):
            node = 0
            while model_t.feature[node] >= 0:
                node = (
                    model_t.left[node]
                    if x[model_t.feature[node]] <= model_t.threshold[node]
                    else model_t.right[node]
                )
            assert model_t.predict(x) == int(np.argmax(model_t.leaf_dist[node])) + 1

    # logistic gradients vs central finite differences
    from dabag.classifiers import _logistic_grad, _logistic_objective

    for _ in range(100):
        n, p, n_cls = 25, int(gen.integers(1, 4)), int(gen.integers(2, 4))
        x1 = np.hstack([gen.standard_normal((n, p)), np.ones((n, 1))])
        onehot = np.eye(n_cls)[gen.integers(0, n_cls, n)]
        w = 0.4 * gen.standard_normal((n_cls, p + 1))
        grad, _ = _logistic_grad(w, x1, onehot, 1e-3)
        h = 1e-6
        fd = np.zeros_like(w)
        for a in range(n_cls):
            for bcol in range(p + 1):
                wp = w.copy()
                wp[a, bcol] += h
                wm = w.copy()
                wm[a, bcol] -= h
                fd[a, bcol] = (
                    _logistic_objective(wp, x1, onehot, 1e-3)
                    - _logistic_objective(wm, x1, onehot, 1e-3)
                ) / (2 * h)
        assert np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12) < 1e-5

    elapsed = time.perf_counter() - start
    ok = elapsed < 120
    assert report(
        7,
        "oracle equivalence suites",
        ok,
        f"5 suites x 100 randomized instances, {elapsed:.1f}s (< 120s)",
    )


# -----------------------------------------------------------------------
# 8. CLI determinism across repeats and worker counts
# -----------------------------------------------------------------------


def test_criterion_8_cli_determinism(tmp_path):
    from dabag.cli import main

    cfg = {
        "seed": 11,
        "reps": 2,
        "scenarios": [
            {"scenario": "setting1", "n_train": 80, "n_test": 80, "q1": 0.5, "epsilon_out": 0.1}
        ],
        "methods": [
            {"tag": "da+knn", "mode": "da", "base": {"kind": "knn", "knn_k": 3},
             "b": 4, "resample": {"k": 1}}
        ],
        "anomaly": {"k": 5, "alpha": 0.1},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    blobs = []
    for name, threads in (("r1", "1"), ("r2", "1"), ("r4", "4")):
        out = tmp_path / name
        assert main(["simulate", str(cfg_path), "--out-dir", str(out), "--threads", threads]) == 0
        blobs.append(
            (out / "results.csv").read_bytes() + (out / "aggregates.json").read_bytes()
        )
    sim_ok = blobs[0] == blobs[1] == blobs[2]

    gt = dabag.gen_setting1(120, 60, 0.4, 0.0, RngStream(8))
    train_csv = tmp_path / "train.csv"
    test_csv = tmp_path / "test.csv"
    with open(train_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(10)] + ["label"])
        for row, lab in zip(gt.train.features, gt.train.labels):
            w.writerow([f"{v:.10g}" for v in row] + [str(lab)])
    with open(test_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(10)])
        for row in gt.test.features:
            w.writerow([f"{v:.10g}" for v in row])

    preds = []
    for name, threads in (("p1", "1"), ("p4", "4")):
        out = tmp_path / f"{name}.csv"
        assert main([
            "fit-predict", "--train", str(train_csv), "--test", str(test_csv),
            "--out", str(out), "--base", "knn", "--b", "4", "--seed", "2",
            "--threads", threads,
        ]) == 0
        preds.append(out.read_bytes())
    fp_ok = preds[0] == preds[1]

    flags = []
    for name in ("d1", "d2"):
        out = tmp_path / f"{name}.csv"
        assert main([
            "detect", "--train", str(train_csv), "--test", str(test_csv),
            "--out", str(out), "--seed", "3", "--k", "5",
        ]) == 0
        flags.append(out.read_bytes())
    det_ok = flags[0] == flags[1]

    ok = sim_ok and fp_ok and det_ok
    assert report(
        8,
        "CLI determinism",
        ok,
        f"simulate byte-identical across reruns/threads: {sim_ok}; "
        f"fit-predict: {fp_ok}; detect: {det_ok}",
    )
