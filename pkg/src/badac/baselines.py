"""k-nearest-neighbour baseline for classification and anomaly scoring.

Distances are Euclidean in value space and ignore the error bars, which is
exactly what the Bayesian scorer adds on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from badac.core import Dataset, Instance, check_grid
from badac.errors import ConfigError, EmptyDatasetError


@dataclass(frozen=True, eq=False)
class NeighborModel:
    grid: np.ndarray
    points: np.ndarray
    labels: tuple
    k: int = 10

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise EmptyDatasetError("neighbour model needs at least one training point")
        if not (1 <= self.k <= self.points.shape[0]):
            raise ConfigError(f"k must be in [1, {self.points.shape[0]}], got {self.k}")

    @property
    def classes(self) -> list:
        return sorted(set(self.labels))

    @classmethod
    def fit(cls, train: Dataset, k: int = 10) -> "NeighborModel":
        grid = train.common_grid()
        return cls(grid, train.values_matrix(), tuple(train.labels()), k)


def _neighbours(model: NeighborModel, values: np.ndarray):
    dist = cdist(values, model.points)
    # stable sort so equal distances resolve to the lower training index
    idx = np.argsort(dist, axis=1, kind="stable")[:, : model.k]
    return np.take_along_axis(dist, idx, axis=1), idx


def knn_classify_batch(model: NeighborModel, values: np.ndarray) -> np.ndarray:
    """(T, C) vote fractions with columns ordered as ``model.classes``."""
    _, idx = _neighbours(model, values)
    labels = np.asarray(model.labels, dtype=object)[idx]
    return np.column_stack([(labels == c).sum(axis=1) / model.k for c in model.classes])


def knn_anomaly_score_batch(model: NeighborModel, values: np.ndarray) -> np.ndarray:
    dist, _ = _neighbours(model, values)
    return dist.mean(axis=1)


def knn_classify(model: NeighborModel, test: Instance) -> dict:
    """Neighbour vote fractions per class."""
    check_grid(test, model.grid)
    row = knn_classify_batch(model, test.values[None, :])[0]
    return {c: float(p) for c, p in zip(model.classes, row)}


def knn_predict(probs: dict):
    """Class with the largest vote; ties go to the smallest class id."""
    return min(sorted(probs), key=lambda c: -probs[c])


def knn_anomaly_score(model: NeighborModel, test: Instance) -> float:
    """Mean distance to the k nearest training instances."""
    check_grid(test, model.grid)
    return float(knn_anomaly_score_batch(model, test.values[None, :])[0])
