"""Command line entry point: ``badac simulate|run|metrics|rank|timing``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import yaml

from badac import engine, harness, io, simulators
from badac.core import class_models_from_dataset
from badac.errors import BadacError, ConfigError, DataError, NumericalError

log = logging.getLogger("badac")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (BadacError, OSError, FloatingPointError, ArithmeticError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))

    return wrapper


def load_config(path, seed=None, scale=None, algorithms=None, threads=None) -> harness.ExperimentConfig:
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
    if seed is not None:
        data["seed"] = seed
    if algorithms:
        data["algorithms"] = [a.strip() for a in algorithms.split(",") if a.strip()]
    if threads is not None:
        data["threads"] = threads
    config = harness.ExperimentConfig.from_dict(data)
    if scale == "paper":
        config = config.scaled("paper")
    return config


def common_options(func):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="YAML or JSON experiment config."),
        click.option("--seed", type=int, default=None, help="64-bit seed (overrides config)."),
        click.option("--scale", type=click.Choice(["desk", "paper"]), default="desk", show_default=True,
                     help="desk keeps configured counts; paper uses 15000/15000."),
        click.option("--algorithms", default=None, help="Comma-separated list: badac,badac_template,knn."),
        click.option("--threads", type=int, default=None, help="Worker threads for scoring."),
    ]
    for opt in reversed(options):
        func = opt(func)
    return func


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Bayesian anomaly detection and classification experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@common_options
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@handle_errors
def simulate(config_path, seed, scale, algorithms, threads, out):
    """Write seeded train/test datasets as CSV plus metadata."""
    config = load_config(config_path, seed, scale, algorithms, threads)
    train, test = simulators.generate_dataset(
        config.kind, config.n_train, config.n_test, config.outlier_fraction, config.grid_points, config.seed,
        config.class_sigmas,
    )
    extra = {"config_hash": config.hash(), "config": config.to_dict()}
    io.write_dataset(train, Path(out) / "train.csv", extra)
    io.write_dataset(test, Path(out) / "test.csv", extra)
    click.echo(f"wrote {len(train)} training and {len(test)} test instances to {out}")


@main.command()
@common_options
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@handle_errors
def run(config_path, seed, scale, algorithms, threads, out):
    """Run an experiment end to end and write report.json plus plot data."""
    config = load_config(config_path, seed, scale, algorithms, threads)
    log.info("running %s with %d/%d instances", config.kind, config.n_train, config.n_test)
    report = harness.run_experiment(config, out)
    for name, summary in report.algorithms.items():
        click.echo(
            f"{name}: AUC={_f(summary['auc'])} RWS={_f(summary['rws'])} MCC={_f(summary['mcc'])} "
            f"accuracy={_f(summary['accuracy'])} time={report.timing[name]['total_seconds']:.2f}s"
        )


def _f(value):
    return "skipped" if value is None else f"{value:.4f}"


@main.command()
@click.argument("table", type=click.Path(exists=True, dir_okay=False))
@click.option("--rws-n", type=int, default=None, help="Ranks scored by RWS (default: number of outliers).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write metrics JSON here.")
@handle_errors
def metrics(table, rws_n, out):
    """Recompute summary metrics from a per-instance posterior table."""
    rows = io.read_table(table)
    required = {"anomaly_score", "flagged", "is_outlier", "true_class", "predicted_class", "prob_positive"}
    if rows and not required <= set(rows[0]):
        raise DataError(f"table lacks columns {sorted(required - set(rows[0]))}")
    summary = harness.metrics_from_table(rows, rws_n)
    summary.pop("roc", None)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command()
@click.option("--train", "train_path", type=click.Path(dir_okay=False), required=True)
@click.option("--test", "test_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Ranking CSV.")
@click.option("--threads", type=int, default=1)
@handle_errors
def rank(train_path, test_path, out, threads):
    """Rank test instances from most to least anomalous against labeled training data."""
    train = io.read_dataset(train_path)
    test = io.read_dataset(test_path)
    models = class_models_from_dataset(train)
    ranking = engine.rank_anomalies(list(test.instances), models, threads)
    rows = [
        {"rank": r + 1, "instance_id": idx, "anomaly_score": score, "class_label": test.instances[idx].label}
        for r, (idx, score) in enumerate(ranking)
    ]
    io.write_table(rows, out, ("rank", "instance_id", "anomaly_score", "class_label"))
    click.echo(f"ranked {len(rows)} instances into {out}")


@main.command()
@common_options
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write timing JSON here.")
@handle_errors
def timing(config_path, seed, scale, algorithms, threads, out):
    """Wall-clock per algorithm on the configured dataset."""
    config = load_config(config_path, seed, scale, algorithms, threads)
    result = harness.timing_report(config)
    text = json.dumps(result, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


if __name__ == "__main__":
    main()
