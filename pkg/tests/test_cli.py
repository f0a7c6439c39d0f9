import csv
import json

import numpy as np
import pytest

from dabag import RngStream, gen_setting1
from dabag.cli import main


def write_csv(path, features, labels=None, label_col="label", names=None):
    p = features.shape[1]
    names = names or [f"f{i}" for i in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = list(names) + ([label_col] if labels is not None else [])
        w.writerow(header)
        for i in range(features.shape[0]):
            row = [f"{v:.10g}" for v in features[i]]
            if labels is not None:
                row.append(str(labels[i]))
            w.writerow(row)


@pytest.fixture
def csv_problem(tmp_path):
    gt = gen_setting1(160, 80, 0.3, 0.0, RngStream(17))
    train = tmp_path / "train.csv"
    test = tmp_path / "test.csv"
    names = {1: "benign", 2: "malignant"}
    write_csv(train, gt.train.features, [names[l] for l in gt.train.labels])
    write_csv(test, gt.test.features)
    return train, test, gt


def tiny_config(tmp_path, threads=1, reps=2):
    cfg = {
        "seed": 3,
        "reps": reps,
        "threads": threads,
        "scenarios": [
            {"scenario": "setting1", "n_train": 60, "n_test": 60, "q1": 0.3}
        ],
        "methods": [
            {"tag": "da+knn", "mode": "da", "base": {"kind": "knn", "knn_k": 3},
             "b": 4, "resample": {"k": 1}},
            {"tag": "single+tree", "mode": "none", "base": "tree"},
        ],
        "anomaly": None,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSimulate:
    def test_smoke_and_outputs(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "results"
        assert main(["simulate", str(cfg), "--out-dir", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "results.csv")))
        assert len(rows) == 4  # 1 scenario x 2 methods x 2 reps
        agg = json.loads((out / "aggregates.json").read_text())
        assert len(agg["aggregates"]) == 2
        assert "setting1" in capsys.readouterr().out

    def test_byte_identical_reruns_and_threads(self, tmp_path):
        cfg = tiny_config(tmp_path)
        outs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / name
            assert main(["simulate", str(cfg), "--out-dir", str(out),
                         "--threads", threads]) == 0
            outs.append(
                ((out / "results.csv").read_bytes(), (out / "aggregates.json").read_bytes())
            )
        assert outs[0][0] == outs[1][0] == outs[2][0]
        assert outs[0][1] == outs[1][1] == outs[2][1]

    def test_flag_overrides(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "r"
        assert main(["simulate", str(cfg), "--out-dir", str(out), "--reps", "1"]) == 0
        rows = list(csv.DictReader(open(out / "results.csv")))
        assert len(rows) == 2

    def test_bad_config_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert main(["simulate", str(bad)]) == 1
        notjson = tmp_path / "nj.json"
        notjson.write_text("{nope")
        assert main(["simulate", str(notjson)]) == 1

    def test_bundled_config_parses(self, tmp_path):
        # desk-scale grid config, cut to a smoke run via flag overrides
        assert main([
            "simulate", "configs/toy3.json", "--out-dir", str(tmp_path / "toy"),
            "--reps", "1", "--b", "2",
        ]) == 0

    def test_bundled_grid_configs_load(self):
        import argparse

        from dabag.cli import _load_config

        blank = argparse.Namespace(
            reps=None, b=None, seed=None, threads=None, k=None,
            eps_stop=None, t_max=None, alpha=None, base=None, mode=None,
        )
        for name, n_scen, anomaly in (
            ("configs/setting1.json", 9, False),
            ("configs/setting2.json", 9, False),
            ("configs/setting1_anomaly.json", 9, True),
            ("configs/setting1_full.json", 9, False),
        ):
            cfg = _load_config(name, blank)
            assert len(cfg["scenarios"]) == n_scen
            assert (cfg["anomaly"] is not None) == anomaly
            assert {m.tag for m in cfg["methods"]} == {
                "da+tree", "classical+tree", "single+tree"
            }


class TestFitPredict:
    def test_predictions_file(self, csv_problem, tmp_path):
        train, test, gt = csv_problem
        out = tmp_path / "preds.csv"
        assert main([
            "fit-predict", "--train", str(train), "--test", str(test),
            "--label", "label", "--out", str(out), "--base", "knn",
            "--mode", "da", "--b", "4", "--seed", "1",
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == gt.test.n
        labels = {r["prediction"] for r in rows}
        assert labels <= {"benign", "malignant"}
        # mostly class 2 under this shift
        frac_mal = np.mean([r["prediction"] == "malignant" for r in rows])
        assert frac_mal > 0.5

    def test_single_row_test(self, csv_problem, tmp_path):
        train, _, gt = csv_problem
        single = tmp_path / "one.csv"
        write_csv(single, gt.test.features[:1])
        out = tmp_path / "one_pred.csv"
        assert main([
            "fit-predict", "--train", str(train), "--test", str(single),
            "--out", str(out), "--mode", "none", "--base", "lda",
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 1

    def test_parity_with_library(self, csv_problem, tmp_path):
        train, test, gt = csv_problem
        out = tmp_path / "p.csv"
        assert main([
            "fit-predict", "--train", str(train), "--test", str(test),
            "--out", str(out), "--base", "knn", "--mode", "da",
            "--b", "4", "--k", "1", "--seed", "9",
        ]) == 0
        rows = list(csv.DictReader(open(out)))

        from dabag import ClassifierSpec, Dataset, MethodSpec, Metric, ResampleConfig
        from dabag.cli import _load_train
        from dabag.evaluate import _predict_method

        ds, _ = _load_train(str(train), "label")
        method = MethodSpec(
            tag="cli", mode="da", base=ClassifierSpec("knn"), b=4,
            resample=ResampleConfig(k=1, eps_stop=0.01, t_max=50, metric=Metric()),
        )
        preds = _predict_method(
            method, ds, Dataset(gt.test.features), RngStream(9).child(2), Metric(), 1
        )
        expected = [ds.label_names[p - 1] for p in preds]
        assert [r["prediction"] for r in rows] == expected

    def test_detect_anomalies_marks_rows(self, tmp_path):
        gt = gen_setting1(200, 100, 0.5, 0.1, RngStream(23))
        train = tmp_path / "tr.csv"
        test = tmp_path / "te.csv"
        write_csv(train, gt.train.features, gt.train.labels)
        write_csv(test, gt.test.features)
        out = tmp_path / "preds.csv"
        assert main([
            "fit-predict", "--train", str(train), "--test", str(test),
            "--out", str(out), "--mode", "none", "--base", "tree",
            "--detect-anomalies", "--alpha", "0.1", "--dtm-k", "5",
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        flagged = [i for i, r in enumerate(rows) if r["prediction"] == "anomaly"]
        assert len(flagged) > 0
        assert all(r["prediction"] in {"1", "2", "anomaly"} for r in rows)

    def test_missing_label_column_exit_1(self, csv_problem):
        train, test, _ = csv_problem
        assert main([
            "fit-predict", "--train", str(train), "--test", str(test),
            "--label", "nope",
        ]) == 1

    def test_malformed_csv_exit_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("f0,label\nx,benign\n")
        test = tmp_path / "t.csv"
        test.write_text("f0\n1.0\n")
        assert main(["fit-predict", "--train", str(bad), "--test", str(test)]) == 2

    def test_missing_feature_column_exit_2(self, csv_problem, tmp_path):
        train, _, _ = csv_problem
        test = tmp_path / "short.csv"
        test.write_text("f0\n1.0\n")
        assert main(["fit-predict", "--train", str(train), "--test", str(test)]) == 2


class TestDetect:
    def test_flags_and_scores(self, tmp_path):
        gt = gen_setting1(300, 200, 0.5, 0.1, RngStream(29))
        train = tmp_path / "tr.csv"
        test = tmp_path / "te.csv"
        write_csv(train, gt.train.features, gt.train.labels)
        write_csv(test, gt.test.features)
        out = tmp_path / "flags.csv"
        assert main([
            "detect", "--train", str(train), "--test", str(test),
            "--out", str(out), "--alpha", "0.1", "--k", "10", "--seed", "4",
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 200
        flag_rate = np.mean([r["flag"] == "1" for r in rows])
        assert 0.0 < flag_rate < 0.4

        # score columns equal a direct recomputation
        from dabag import Dataset, dtm_scores
        from dabag.cli import _load_train

        ds, _ = _load_train(str(train), "label")
        scores = dtm_scores(gt.test.features, ds, 10)
        got = np.array([[float(r["dtm_1"]), float(r["dtm_2"])] for r in rows])
        np.testing.assert_allclose(got, scores, atol=1e-9)

    def test_empty_test_file(self, tmp_path):
        gt = gen_setting1(100, 10, 0.5, 0.0, RngStream(31))
        train = tmp_path / "tr.csv"
        write_csv(train, gt.train.features, gt.train.labels)
        empty = tmp_path / "empty.csv"
        empty.write_text(",".join(f"f{i}" for i in range(10)) + "\n")
        out = tmp_path / "flags.csv"
        assert main(["detect", "--train", str(train), "--test", str(empty),
                     "--out", str(out)]) == 0
        assert len(list(csv.DictReader(open(out)))) == 0

    def test_usage_error_missing_args(self):
        assert main(["detect"]) == 1
