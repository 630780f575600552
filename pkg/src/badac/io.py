"""Dataset and table files.

Datasets are long-format CSV (one row per point) with a JSON sidecar holding
the generator name, seed and config hash.  Floats are written with ``repr``,
which round-trips every finite double exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from badac.core import Dataset, Instance
from badac.errors import DataError

DATASET_COLUMNS = ("instance_id", "class_label", "point_index", "x", "y", "sigma")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def parse_label(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return text


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def metadata_path(csv_path: Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def write_dataset(dataset: Dataset, path, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_COLUMNS)
        for i, inst in enumerate(dataset.instances):
            for j in range(inst.m):
                writer.writerow(
                    [i, fmt(inst.label), j, fmt(inst.grid[j]), fmt(inst.values[j]), fmt(inst.sigmas[j])]
                )
    meta = dict(dataset.metadata)
    meta.update(metadata or {})
    meta["classes"] = [fmt(c) for c in dataset.classes]
    write_json(meta, metadata_path(path))
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    rows = OrderedDict()
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DATASET_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(DATASET_COLUMNS)}")
        for row in reader:
            try:
                key = int(row["instance_id"])
                point = (int(row["point_index"]), float(row["x"]), float(row["y"]), float(row["sigma"]))
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {row}") from exc
            entry = rows.setdefault(key, {"label": parse_label(row["class_label"]), "points": []})
            entry["points"].append(point)
    instances = []
    for key, entry in rows.items():
        pts = sorted(entry["points"])
        if [p[0] for p in pts] != list(range(len(pts))):
            raise DataError(f"{path}: instance {key} has missing or repeated point indices")
        arr = np.array([p[1:] for p in pts])
        instances.append(Instance(arr[:, 0], arr[:, 1], arr[:, 2], entry["label"]))
    meta = {}
    mpath = metadata_path(path)
    if mpath.exists():
        meta = json.loads(mpath.read_text(encoding="utf-8"))
    classes = tuple(parse_label(c) for c in meta.get("classes", ()))
    return Dataset(instances, classes, meta)


def write_table(rows: Sequence[dict], path, columns: Optional[Iterable[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c)) for c in columns])
    return path


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
    return path
