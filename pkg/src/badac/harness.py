"""End-to-end experiments: simulate, score, evaluate, report."""

from __future__ import annotations

import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from badac import baselines, engine, io, metrics, simulators
from badac.core import class_models_from_dataset
from badac.errors import ConfigError, MissingColumnsError, MissingMetricError

KINDS = tuple(simulators.EXPERIMENTS)
ALGORITHMS = ("badac", "badac_template", "knn")
ANOMALY_MODES = ("tophat_range", "contamination_calibrated")
DEFAULT_ANOMALY_MODE = {
    "gaussian": "tophat_range",
    "compact": "tophat_range",
    "non_gaussian": "contamination_calibrated",
    "correlated": "contamination_calibrated",
}
SCALES = {"desk": 2000, "paper": 15000}
POSITIVE_CLASS = 1

# Static figures for algorithms this package does not implement, labeled as such in reports.
REFERENCE_FROM_PAPER = {
    "note": "from paper (15000 train / 15000 test); not recomputed here",
    "anomaly_detection": {
        "gaussian": {
            "BADAC": {"MCC": 0.95, "AUC": 0.99, "RWS": 0.99},
            "IsolationForest": {"MCC": 0.00, "AUC": 0.89, "RWS": 0.02},
            "LOF": {"MCC": 0.83, "AUC": 0.97, "RWS": 0.96},
        },
        "compact": {
            "BADAC": {"MCC": 0.41, "AUC": 0.91, "RWS": 0.59},
            "IsolationForest": {"MCC": 0.11, "AUC": 0.80, "RWS": 0.14},
            "LOF": {"MCC": 0.44, "AUC": 0.90, "RWS": 0.63},
        },
        "non_gaussian": {
            "BADAC": {"MCC": 0.84, "AUC": 0.99, "RWS": 0.96},
            "IsolationForest": {"MCC": 0.06, "AUC": 0.84, "RWS": 0.10},
            "LOF": {"MCC": 0.16, "AUC": 0.84, "RWS": 0.18},
        },
        "correlated": {
            "BADAC": {"MCC": 0.68, "AUC": 0.97, "RWS": 0.84},
            "IsolationForest": {"MCC": 0.01, "AUC": 0.70, "RWS": 0.03},
            "LOF": {"MCC": 0.61, "AUC": 0.96, "RWS": 0.76},
        },
    },
    "classification_accuracy_percent": {
        "gaussian": {"BADAC": 99.02, "RandomForest": 98.66},
        "compact": {"BADAC": 95.51, "RandomForest": 95.18},
        "non_gaussian": {"BADAC": 97.71, "RandomForest": 98.14},
        "correlated": {"BADAC": 68.88, "RandomForest": 96.72},
    },
    "timing_seconds_total": {
        "RandomForest": {"train": 96.30, "test": 2.94, "total": 99.24},
        "IsolationForest": {"train": 1.62, "test": 1.21, "total": 2.83},
        "LOF": {"train": 13.21, "test": 27.25, "total": 40.46},
        "BADAC": {"total": 1281.82},
    },
}


@dataclass
class ExperimentConfig:
    kind: str = "gaussian"
    n_train: int = 2000
    n_test: int = 2000
    outlier_fraction: float = 0.01
    grid_points: int = 50
    seed: int = 0
    anomaly_prior: Optional[str] = None
    contamination: float = 0.01
    rws_n: Optional[int] = None
    algorithms: tuple = ("badac", "knn")
    knn_k: int = 10
    threads: int = 1
    class_sigmas: Optional[dict] = None

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        if self.class_sigmas is not None:
            self.class_sigmas = {int(k): float(v) for k, v in self.class_sigmas.items()}
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigError("n_train must be >= 2 and n_test >= 1")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ConfigError("outlier_fraction must lie in [0, 1)")
        if not (0.0 < self.contamination < 1.0):
            raise ConfigError("contamination must lie in (0, 1)")
        if self.grid_points < 5:
            raise ConfigError("grid_points must be >= 5")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.anomaly_prior is not None and self.anomaly_prior not in ANOMALY_MODES:
            raise ConfigError(f"anomaly_prior must be one of {ANOMALY_MODES}")
        if self.rws_n is not None and self.rws_n < 1:
            raise ConfigError("rws_n must be >= 1")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown or not self.algorithms:
            raise ConfigError(f"algorithms must be drawn from {ALGORITHMS}, got {self.algorithms}")
        if self.threads < 1 or self.knn_k < 1:
            raise ConfigError("threads and knn_k must be >= 1")

    @property
    def anomaly_mode(self) -> str:
        return self.anomaly_prior or DEFAULT_ANOMALY_MODE[self.kind]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["algorithms"] = list(self.algorithms)
        if self.class_sigmas is not None:
            out["class_sigmas"] = {str(k): v for k, v in sorted(self.class_sigmas.items())}
        return out

    def scaled(self, scale: str) -> "ExperimentConfig":
        if scale not in SCALES:
            raise ConfigError(f"scale must be one of {tuple(SCALES)}")
        data = self.to_dict()
        data["n_train"] = data["n_test"] = SCALES[scale]
        return ExperimentConfig.from_dict(data)

    def hash(self) -> str:
        data = self.to_dict()
        # thread count does not affect results
        data.pop("threads")
        return io.config_hash(data)


@dataclass
class MetricsReport:
    config: dict
    config_hash: str
    dataset: dict
    algorithms: dict
    tables: dict = field(repr=False)
    timing: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "dataset": self.dataset,
            "algorithms": self.algorithms,
            "timing": self.timing,
            "reference_from_paper": REFERENCE_FROM_PAPER,
        }


# ---------------------------------------------------------------------------
# metrics from a per-instance table
# ---------------------------------------------------------------------------


def metrics_from_table(rows: list, rws_n: Optional[int] = None, bin_count: int = 10) -> dict:
    """Summary metrics from the generic columns of a per-instance table.

    Uses ``anomaly_score``, ``flagged``, ``is_outlier``, ``true_class``,
    ``predicted_class`` and ``prob_positive``.  Metrics that cannot be formed
    (no outliers, no inliers) are reported as None with a reason.
    """
    out = {"skipped": {}}
    truth = [int(r["is_outlier"]) for r in rows]
    scores = [float(r["anomaly_score"]) for r in rows]
    n_out = sum(truth)
    if 0 < n_out < len(rows):
        roc = metrics.roc_curve(scores, truth)
        out["roc"] = roc
        out["auc"] = metrics.auc(roc)
    else:
        out["roc"], out["auc"] = None, None
        out["skipped"]["auc"] = "truth has a single class"
    n_rank = rws_n if rws_n is not None else n_out
    if n_rank >= 1 and n_rank <= len(rows):
        out["rws"] = metrics.rws(metrics.rank_truth(scores, truth), n_rank)
        out["rws_n"] = n_rank
    else:
        out["rws"], out["rws_n"] = None, None
        out["skipped"]["rws"] = "no anomalies to rank"
    tp, tn, fp, fn = metrics.confusion([int(r["flagged"]) for r in rows], truth)
    out["confusion"] = {"tp": tp, "tn": tn, "fp": fp, "fn": fn}
    out["mcc"] = metrics.mcc(tp, tn, fp, fn)

    inliers = [r for r in rows if not int(r["is_outlier"])]
    if inliers:
        pred = [r["predicted_class"] for r in inliers]
        true = [r["true_class"] for r in inliers]
        out["accuracy"] = metrics.accuracy(pred, true)
        out["accuracy_macro"] = metrics.macro_accuracy(pred, true)
        curve = metrics.calibration_curve(
            [float(r["prob_positive"]) for r in inliers],
            [int(r["true_class"] == POSITIVE_CLASS) for r in inliers],
            bin_count,
        )
        out["calibration"] = [asdict(b) for b in curve.bins]
    else:
        out["accuracy"] = out["accuracy_macro"] = out["calibration"] = None
        out["skipped"]["accuracy"] = "no inlier test instances"
    return out


# ---------------------------------------------------------------------------
# algorithms
# ---------------------------------------------------------------------------


def _badac_rows(loglik, a_ll, log_priors, log_a_prior, class_ids, test):
    rows = []
    labels = test.labels()
    outlier_classes = set(test.metadata.get("outlier_classes", ()))
    known = logsumexp(loglik + log_priors, axis=1)
    pos = class_ids.index(POSITIVE_CLASS) if POSITIVE_CLASS in class_ids else None
    for t in range(loglik.shape[0]):
        lev = loglik[t] + log_priors
        terms = np.append(lev, a_ll[t] + log_a_prior)
        probs = np.exp(terms - logsumexp(terms))
        probs = probs / probs.sum()
        cls_probs = np.exp(lev - logsumexp(lev))
        row = {
            "instance_id": t,
            "true_class": labels[t],
            "is_outlier": int(labels[t] in outlier_classes),
        }
        for k, cid in enumerate(class_ids):
            row[f"logL_{cid}"] = float(loglik[t, k])
        row["logL_anomaly"] = float(a_ll[t])
        for k, cid in enumerate(class_ids):
            row[f"prob_{cid}"] = float(probs[k])
        row["prob_anomaly"] = float(probs[-1])
        row["anomaly_score"] = float(-known[t])
        # anomalous when the anomaly hypothesis outweighs all known classes together;
        # the slack absorbs the rounding of (height - log prior) + log prior
        row["flagged"] = int(a_ll[t] + log_a_prior >= known[t] - 1e-12 * abs(known[t]))
        row["predicted_class"] = class_ids[int(np.argmax(lev))]
        row["prob_positive"] = float(cls_probs[pos]) if pos is not None else 0.0
        rows.append(row)
    return rows


def _anomaly_terms(config, train, test, loglik, log_priors, log_a_prior):
    if config.anomaly_mode == "tophat_range":
        tophat = engine.make_tophat_from_data(train, test)
        a_ll = engine.anomaly_log_likelihood_batch(test.values_matrix(), tophat)
        return a_ll, {"mode": "tophat_range", "lower": tophat.lower, "upper": tophat.upper}
    known = logsumexp(loglik + log_priors, axis=1)
    height = engine.calibrate_tophat_by_contamination(known, config.contamination)
    a_ll = np.full(loglik.shape[0], height - log_a_prior)
    return a_ll, {"mode": "contamination_calibrated", "fraction": config.contamination, "log_height": height}


def run_badac(config, train, test, template=False):
    models = class_models_from_dataset(train, total_prior=len(train.classes) / (len(train.classes) + 1))
    a_prior = 1.0 / (len(models) + 1)
    log_priors = np.log([m.prior for m in models])
    log_a_prior = math.log(a_prior)
    values = test.values_matrix()
    variances = test.sigma_matrix() ** 2
    start = time.perf_counter()
    if template:
        templates = [engine.compress_to_template(m) for m in models]
        loglik = engine.template_score_arrays(values, variances, templates)
    else:
        loglik = engine.score_arrays(values, variances, models, config.threads)
    a_ll, anomaly_info = _anomaly_terms(config, train, test, loglik, log_priors, log_a_prior)
    elapsed = time.perf_counter() - start
    class_ids = [m.class_id for m in models]
    rows = _badac_rows(loglik, a_ll, log_priors, log_a_prior, class_ids, test)
    timing = {"total_seconds": elapsed, "pairs": len(train) * len(test)}
    return rows, {"anomaly": anomaly_info, "priors": {**{str(c): m.prior for c, m in zip(class_ids, models)}, "anomaly": a_prior}}, timing


def run_knn(config, train, test):
    start = time.perf_counter()
    model = baselines.NeighborModel.fit(train, min(config.knn_k, len(train)))
    fit_time = time.perf_counter() - start
    values = test.values_matrix()
    start = time.perf_counter()
    votes = baselines.knn_classify_batch(model, values)
    scores = baselines.knn_anomaly_score_batch(model, values)
    score_time = time.perf_counter() - start

    labels = test.labels()
    outlier_classes = set(test.metadata.get("outlier_classes", ()))
    n_flag = max(1, math.ceil(config.contamination * len(test) - 1e-9))
    order = sorted(range(len(test)), key=lambda i: (-scores[i], i))
    flagged = set(order[:n_flag])
    classes = model.classes
    pos = classes.index(POSITIVE_CLASS) if POSITIVE_CLASS in classes else None
    rows = []
    for t in range(len(test)):
        row = {"instance_id": t, "true_class": labels[t], "is_outlier": int(labels[t] in outlier_classes)}
        for k, cid in enumerate(classes):
            row[f"vote_{cid}"] = float(votes[t, k])
        row["anomaly_score"] = float(scores[t])
        row["flagged"] = int(t in flagged)
        # argmax keeps the first maximum, i.e. the smallest class id
        row["predicted_class"] = classes[int(np.argmax(votes[t]))]
        row["prob_positive"] = float(votes[t, pos]) if pos is not None else 0.0
        rows.append(row)
    timing = {"fit_seconds": fit_time, "score_seconds": score_time, "total_seconds": fit_time + score_time}
    return rows, {"k": model.k, "flagged_count": n_flag}, timing


def run_experiment(config: ExperimentConfig, out_dir=None) -> MetricsReport:
    """Simulate, score with every configured algorithm, evaluate, optionally write artifacts."""
    train, test = simulators.generate_dataset(
        config.kind,
        config.n_train,
        config.n_test,
        config.outlier_fraction,
        config.grid_points,
        config.seed,
        config.class_sigmas,
    )
    algos, tables, timing = {}, {}, {}
    for name in config.algorithms:
        if name == "knn":
            rows, info, tm = run_knn(config, train, test)
        else:
            rows, info, tm = run_badac(config, train, test, template=(name == "badac_template"))
        summary = metrics_from_table(rows, config.rws_n)
        summary["settings"] = info
        algos[name] = summary
        tables[name] = rows
        timing[name] = tm
    meta = {k: v for k, v in test.metadata.items() if k not in ("grid", "split")}
    report = MetricsReport(config.to_dict(), config.hash(), meta, algos, tables, timing)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def write_report(report: MetricsReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(report.to_json(), out / "report.json")
    for name, rows in report.tables.items():
        io.write_table(rows, out / f"posteriors_{name}.csv")
        if report.algorithms[name].get("roc") is not None:
            emit_roc_data(report, out / f"roc_{name}.csv", name)
        if report.algorithms[name].get("calibration") is not None:
            emit_calibration_data(report, out / f"calibration_{name}.csv", name)
    if "badac" in report.tables:
        emit_scatter_data(report, out / "scatter_badac.csv")
    return out


def emit_scatter_data(report: MetricsReport, path, algorithm: str = "badac") -> Path:
    """instance_id, logP0, logP1, true_class for a log-probability scatter plot."""
    rows = report.tables.get(algorithm)
    if rows is None:
        raise MissingColumnsError(f"report has no table for {algorithm!r}")
    if rows and not {"logL_0", "logL_1"} <= set(rows[0]):
        raise MissingColumnsError("table lacks logL_0/logL_1 columns")
    out = [
        {"instance_id": r["instance_id"], "logP0": r["logL_0"], "logP1": r["logL_1"], "true_class": r["true_class"]}
        for r in rows
    ]
    return io.write_table(out, path, ("instance_id", "logP0", "logP1", "true_class"))


def emit_calibration_data(report: MetricsReport, path, algorithm: str = "badac") -> Path:
    bins = report.algorithms.get(algorithm, {}).get("calibration")
    if bins is None:
        raise MissingMetricError(f"no calibration curve for {algorithm!r}")
    return io.write_table(bins, path, ("mean_predicted", "fraction_positive", "count", "poisson_error"))


def emit_roc_data(report: MetricsReport, path, algorithm: str = "badac") -> Path:
    roc = report.algorithms.get(algorithm, {}).get("roc")
    if roc is None:
        raise MissingMetricError(f"no ROC curve for {algorithm!r}")
    return io.write_table([{"fpr": x, "tpr": y} for x, y in roc], path, ("fpr", "tpr"))


def hardware_note(threads: int) -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
        "threads": threads,
    }


def timing_report(config: ExperimentConfig) -> dict:
    """Wall-clock per algorithm on the configured dataset.

    BADAC has no separate training phase and reports one combined time.
    """
    train, test = simulators.generate_dataset(
        config.kind, config.n_train, config.n_test, config.outlier_fraction, config.grid_points, config.seed,
        config.class_sigmas,
    )
    result = {"n_train": len(train), "n_test": len(test), "n_train_x_n_test": len(train) * len(test)}
    algos = {}
    for name in config.algorithms:
        if name == "knn":
            _, _, tm = run_knn(config, train, test)
        else:
            _, _, tm = run_badac(config, train, test, template=(name == "badac_template"))
        algos[name] = tm
    result["algorithms"] = algos
    result["hardware"] = hardware_note(config.threads)
    return result
