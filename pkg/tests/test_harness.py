import math

import numpy as np
import pytest

from badac import harness, io, metrics
from badac.errors import ConfigError, MissingColumnsError, MissingMetricError
from badac.harness import ExperimentConfig, run_experiment


def small(kind="gaussian", **kw):
    args = dict(kind=kind, n_train=300, n_test=300, grid_points=20, seed=5, algorithms=("badac", "badac_template", "knn"))
    args.update(kw)
    return ExperimentConfig(**args)


@pytest.fixture(scope="module")
def gaussian_report():
    return run_experiment(small(outlier_fraction=0.05))


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.n_train, cfg.n_test, cfg.outlier_fraction, cfg.grid_points) == (2000, 2000, 0.01, 50)
        assert cfg.anomaly_mode == "tophat_range"
        assert ExperimentConfig(kind="non_gaussian").anomaly_mode == "contamination_calibrated"
        assert ExperimentConfig(kind="correlated").anomaly_mode == "contamination_calibrated"
        assert ExperimentConfig(kind="compact").anomaly_mode == "tophat_range"

    @pytest.mark.parametrize(
        "bad",
        [
            {"kind": "poisson"},
            {"n_train": 0},
            {"outlier_fraction": 1.0},
            {"algorithms": ["forest"]},
            {"anomaly_prior": "gaussian"},
            {"seed": -1},
            {"seed": 2**64},
            {"threads": 0},
        ],
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"n_trian": 5})

    def test_round_trip_and_hash(self):
        cfg = ExperimentConfig(kind="compact", seed=7, class_sigmas={1: 0.3})
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.hash() == cfg.hash()
        assert ExperimentConfig(threads=8).hash() == ExperimentConfig().hash()
        assert ExperimentConfig(seed=1).hash() != ExperimentConfig().hash()

    def test_paper_scale(self):
        assert ExperimentConfig().scaled("paper").n_train == 15000


class TestRunExperiment:
    def test_rows_per_instance(self, gaussian_report):
        for rows in gaussian_report.tables.values():
            assert len(rows) == 300
            assert [r["instance_id"] for r in rows] == list(range(300))

    def test_metric_ranges(self, gaussian_report):
        for summary in gaussian_report.algorithms.values():
            assert 0 <= summary["auc"] <= 1
            assert 0 <= summary["rws"] <= 1
            assert -1 <= summary["mcc"] <= 1
            assert 0 <= summary["accuracy"] <= 1
            assert summary["rws_n"] == 15

    def test_probabilities_normalised(self, gaussian_report):
        for r in gaussian_report.tables["badac"]:
            assert r["prob_0"] + r["prob_1"] + r["prob_anomaly"] == pytest.approx(1.0, abs=1e-12)

    def test_recomputed_metrics_match(self, gaussian_report, tmp_path):
        harness.write_report(gaussian_report, tmp_path)
        for name, summary in gaussian_report.algorithms.items():
            rows = io.read_table(tmp_path / f"posteriors_{name}.csv")
            again = harness.metrics_from_table(rows)
            for key in ("auc", "rws", "mcc", "accuracy", "accuracy_macro", "confusion", "calibration"):
                assert again[key] == summary[key], (name, key)

    def test_deterministic_tables(self, tmp_path):
        cfg = small(n_train=120, n_test=150, threads=1)
        harness.write_report(run_experiment(cfg), tmp_path / "a")
        cfg.threads = 3
        harness.write_report(run_experiment(cfg), tmp_path / "b")
        for name in ("posteriors_badac.csv", "posteriors_knn.csv", "roc_badac.csv", "scatter_badac.csv", "calibration_badac.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_no_outliers_skips_rws(self):
        report = run_experiment(small(outlier_fraction=0.0, algorithms=("badac",)))
        summary = report.algorithms["badac"]
        assert summary["rws"] is None and summary["auc"] is None
        assert "rws" in summary["skipped"]

    def test_contamination_flags_exact_fraction(self):
        report = run_experiment(small("non_gaussian", n_test=400, algorithms=("badac", "knn")))
        for name in ("badac", "knn"):
            c = report.algorithms[name]["confusion"]
            assert c["tp"] + c["fp"] == math.ceil(0.01 * 400)

    def test_reference_values_labeled(self, gaussian_report):
        blob = gaussian_report.to_json()
        assert blob["reference_from_paper"]["note"].startswith("from paper")
        assert blob["reference_from_paper"]["anomaly_detection"]["gaussian"]["LOF"]["AUC"] == 0.97


class TestEmitters:
    def test_roc_file_integrates_to_auc(self, gaussian_report, tmp_path):
        path = harness.emit_roc_data(gaussian_report, tmp_path / "roc.csv")
        rows = io.read_table(path)
        roc = [(float(r["fpr"]), float(r["tpr"])) for r in rows]
        assert abs(metrics.auc(roc) - gaussian_report.algorithms["badac"]["auc"]) <= 1e-9

    def test_scatter_columns(self, gaussian_report, tmp_path):
        path = harness.emit_scatter_data(gaussian_report, tmp_path / "s.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "instance_id,logP0,logP1,true_class"
        assert len(lines) == 301

    def test_scatter_empty_table(self, tmp_path):
        report = harness.MetricsReport({}, "", {}, {"badac": {}}, {"badac": []})
        path = harness.emit_scatter_data(report, tmp_path / "s.csv")
        assert path.read_text() == "instance_id,logP0,logP1,true_class\n"

    def test_scatter_missing_columns(self, gaussian_report, tmp_path):
        with pytest.raises(MissingColumnsError):
            harness.emit_scatter_data(gaussian_report, tmp_path / "s.csv", algorithm="knn")

    def test_calibration_file(self, gaussian_report, tmp_path):
        rows = io.read_table(harness.emit_calibration_data(gaussian_report, tmp_path / "c.csv"))
        assert sum(int(r["count"]) for r in rows) == 300 - 15
        assert all(0 <= r["fraction_positive"] <= 1 for r in rows)

    def test_missing_metric(self, tmp_path):
        report = harness.MetricsReport({}, "", {}, {"badac": {"roc": None}}, {"badac": []})
        with pytest.raises(MissingMetricError):
            harness.emit_roc_data(report, tmp_path / "r.csv")
        with pytest.raises(MissingMetricError):
            harness.emit_calibration_data(report, tmp_path / "c.csv")


@pytest.fixture(scope="module")
def runs():
    out = {}
    for kind in ("gaussian", "correlated"):
        cfg = ExperimentConfig(kind=kind, n_train=400, n_test=400, seed=1, algorithms=("badac",))
        out[kind] = run_experiment(cfg).tables["badac"]
    return out


class TestScatterShape:
    @staticmethod
    def mean_log_ratio(rows, cls):
        return np.mean([r["logL_1"] - r["logL_0"] for r in rows if r["true_class"] == cls])

    @staticmethod
    def crossing_fraction(rows):
        return np.mean([r["logL_1"] > r["logL_0"] for r in rows if r["true_class"] == 0])

    def test_gaussian_clusters_straddle_diagonal(self, runs):
        rows = runs["gaussian"]
        assert self.mean_log_ratio(rows, 0) < 0
        assert self.mean_log_ratio(rows, 1) > 0

    def test_correlated_class_zero_shifts_toward_diagonal(self, runs):
        assert self.mean_log_ratio(runs["correlated"], 0) > self.mean_log_ratio(runs["gaussian"], 0)
        assert self.crossing_fraction(runs["correlated"]) > self.crossing_fraction(runs["gaussian"])


class TestTiming:
    def test_report_structure(self):
        result = harness.timing_report(small(n_train=50, n_test=60))
        assert result["n_train_x_n_test"] == 3000
        assert set(result["algorithms"]) == {"badac", "badac_template", "knn"}
        assert set(result["algorithms"]["knn"]) == {"fit_seconds", "score_seconds", "total_seconds"}
        assert "fit_seconds" not in result["algorithms"]["badac"]
        assert result["hardware"]["threads"] == 1
        assert "platform" in result["hardware"]

    def test_doubling_training_set_doubles_time(self):
        cfg = ExperimentConfig(n_train=2000, n_test=1000, algorithms=("badac",))
        t1 = min(harness.timing_report(cfg)["algorithms"]["badac"]["total_seconds"] for _ in range(3))
        cfg2 = ExperimentConfig(n_train=4000, n_test=1000, algorithms=("badac",))
        t2 = min(harness.timing_report(cfg2)["algorithms"]["badac"]["total_seconds"] for _ in range(3))
        assert t2 / t1 == pytest.approx(2.0, rel=0.3)


@pytest.fixture(scope="module")
def desk_gaussian():
    cfg = ExperimentConfig(kind="gaussian", seed=0, algorithms=("badac", "badac_template", "knn"))
    return run_experiment(cfg)


@pytest.mark.slow
class TestDeskComparisons:
    def test_template_close_to_full_and_faster(self, desk_gaussian):
        full, tmpl = desk_gaussian.algorithms["badac"], desk_gaussian.algorithms["badac_template"]
        assert abs(full["auc"] - tmpl["auc"]) <= 0.05
        speedup = desk_gaussian.timing["badac"]["total_seconds"] / desk_gaussian.timing["badac_template"]["total_seconds"]
        assert speedup >= 5

    def test_knn_accuracy_below_badac(self, desk_gaussian):
        assert desk_gaussian.algorithms["knn"]["accuracy"] < desk_gaussian.algorithms["badac"]["accuracy"]

    def test_knn_auc_between_chance_and_badac(self, desk_gaussian):
        knn = desk_gaussian.algorithms["knn"]["auc"]
        assert 0.5 < knn < desk_gaussian.algorithms["badac"]["auc"]

    def test_gaussian_calibration_consistent(self, desk_gaussian):
        for b in desk_gaussian.algorithms["badac"]["calibration"]:
            err = math.sqrt(max(b["fraction_positive"] * b["count"], 1.0)) / b["count"]
            assert abs(b["fraction_positive"] - b["mean_predicted"]) <= 3 * err


def test_correlated_calibration_visibly_off():
    report = run_experiment(ExperimentConfig(kind="correlated", seed=0, n_train=1000, n_test=1000, algorithms=("badac",)))
    off = [
        b for b in report.algorithms["badac"]["calibration"]
        if b["count"] >= 20
        and abs(b["fraction_positive"] - b["mean_predicted"]) > 3 * math.sqrt(max(b["fraction_positive"] * b["count"], 1.0)) / b["count"]
    ]
    assert off
