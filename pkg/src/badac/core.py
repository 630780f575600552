"""Shared data model: instances, class models, templates, covariances, datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Optional, Sequence

import numpy as np

from badac.errors import (
    DataError,
    DimensionMismatchError,
    EmptyClassError,
    GridMismatchError,
    LengthMismatchError,
    NonMonotoneGridError,
    NonPositiveSigmaError,
    NonPSDCovarianceError,
)

Label = Optional[Hashable]

PSD_JITTER = 1e-10
SYMMETRY_RTOL = 1e-12


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """One object's feature vector on a grid, with 1-sigma errors per point."""

    grid: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray
    label: Label = None

    def __post_init__(self):
        for name in ("grid", "values", "sigmas"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        validate_instance(self)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def with_values(self, values, sigmas=None) -> Instance:
        return Instance(self.grid, values, self.sigmas if sigmas is None else sigmas, self.label)

    def with_label(self, label: Label) -> Instance:
        return Instance(self.grid, self.values, self.sigmas, label)


def validate_instance(inst: Instance) -> Instance:
    """Check the structural invariants of ``inst`` and return it unchanged.

    Raises LengthMismatchError, NonPositiveSigmaError or NonMonotoneGridError.
    """
    grid = np.asarray(inst.grid, dtype=np.float64)
    values = np.asarray(inst.values, dtype=np.float64)
    sigmas = np.asarray(inst.sigmas, dtype=np.float64)
    if grid.ndim != 1 or values.ndim != 1 or sigmas.ndim != 1:
        raise LengthMismatchError("grid, values and sigmas must be one-dimensional")
    m = grid.shape[0]
    if m < 1 or values.shape[0] != m or sigmas.shape[0] != m:
        raise LengthMismatchError(
            f"grid/values/sigmas lengths differ or are empty: "
            f"{grid.shape[0]}, {values.shape[0]}, {sigmas.shape[0]}"
        )
    if not np.all(np.isfinite(sigmas)) or np.any(sigmas <= 0.0):
        raise NonPositiveSigmaError("every sigma must be strictly positive and finite")
    if m > 1 and not np.all(np.diff(grid) > 0.0):
        raise NonMonotoneGridError("grid must be strictly increasing")
    return inst


def same_grid(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and np.array_equal(a, b)


def check_grid(test: Instance, grid: np.ndarray) -> None:
    if not same_grid(test.grid, grid):
        raise GridMismatchError("instance grid differs from the model grid")


@dataclass(frozen=True, eq=False)
class ClassModel:
    """Training instances of one class plus its prior probability."""

    class_id: Hashable
    instances: tuple
    prior: float = 1.0

    def __post_init__(self):
        instances = tuple(self.instances)
        if not instances:
            raise EmptyClassError(f"class {self.class_id!r} has no instances")
        grid = instances[0].grid
        for inst in instances[1:]:
            if not same_grid(inst.grid, grid):
                raise GridMismatchError(f"class {self.class_id!r} members do not share a grid")
        if not (0.0 < self.prior <= 1.0):
            raise DataError(f"prior must lie in (0, 1], got {self.prior}")
        object.__setattr__(self, "instances", instances)

    @property
    def grid(self) -> np.ndarray:
        return self.instances[0].grid

    @property
    def n(self) -> int:
        return len(self.instances)

    @cached_property
    def values_matrix(self) -> np.ndarray:
        out = np.stack([inst.values for inst in self.instances])
        out.setflags(write=False)
        return out

    @cached_property
    def variance_matrix(self) -> np.ndarray:
        out = np.stack([inst.sigmas for inst in self.instances]) ** 2
        out.setflags(write=False)
        return out

    def with_prior(self, prior: float) -> ClassModel:
        return ClassModel(self.class_id, self.instances, prior)


def merge_into_class(model: ClassModel, inst: Instance) -> ClassModel:
    """Return a copy of ``model`` with ``inst`` appended; duplicates are kept."""
    check_grid(inst, model.grid)
    return ClassModel(model.class_id, model.instances + (inst,), model.prior)


@dataclass(frozen=True, eq=False)
class TemplateModel:
    """Per-point summary of a class: mean and standard deviation on a grid."""

    class_id: Hashable
    grid: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    prior: float = 1.0

    def __post_init__(self):
        for name in ("grid", "mean", "sigma"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if not (self.grid.shape == self.mean.shape == self.sigma.shape):
            raise LengthMismatchError("template grid, mean and sigma lengths differ")
        if not np.all(np.isfinite(self.sigma)) or np.any(self.sigma <= 0.0):
            raise NonPositiveSigmaError("template sigma must be strictly positive")
        if not (0.0 < self.prior <= 1.0):
            raise DataError(f"prior must lie in (0, 1], got {self.prior}")


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Symmetric positive semidefinite covariance over the feature index."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64, copy=True)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatchError("covariance must be a square matrix")
        if not np.all(np.isfinite(mat)):
            raise NonPSDCovarianceError("covariance contains non-finite entries")
        scale = max(np.max(np.abs(mat)), np.finfo(float).tiny)
        if np.max(np.abs(mat - mat.T)) > SYMMETRY_RTOL * scale:
            raise NonPSDCovarianceError("covariance is not symmetric")
        mat = 0.5 * (mat + mat.T)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "_factor", psd_cholesky(mat))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def factor(self) -> np.ndarray:
        """Lower Cholesky factor (computed with at most PSD_JITTER on the diagonal)."""
        return self._factor


def psd_cholesky(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(mat + PSD_JITTER * np.eye(mat.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NonPSDCovarianceError("covariance is not positive semidefinite") from exc


@dataclass(frozen=True, eq=False)
class Dataset:
    instances: tuple
    classes: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        instances = tuple(self.instances)
        present = []
        for inst in instances:
            if inst.label is not None and inst.label not in present:
                present.append(inst.label)
        classes = tuple(self.classes) if self.classes else tuple(sorted(present, key=_label_key))
        missing = [lab for lab in present if lab not in classes]
        if missing:
            raise DataError(f"labels {missing!r} not listed in dataset classes")
        object.__setattr__(self, "instances", instances)
        object.__setattr__(self, "classes", classes)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def grid(self) -> np.ndarray:
        if not self.instances:
            raise DataError("empty dataset has no grid")
        return self.instances[0].grid

    def common_grid(self) -> np.ndarray:
        grid = self.grid
        for inst in self.instances:
            check_grid(inst, grid)
        return grid

    def values_matrix(self) -> np.ndarray:
        return np.stack([inst.values for inst in self.instances])

    def sigma_matrix(self) -> np.ndarray:
        return np.stack([inst.sigmas for inst in self.instances])

    def labels(self) -> list:
        return [inst.label for inst in self.instances]

    def by_label(self, label) -> list:
        return [inst for inst in self.instances if inst.label == label]


def _label_key(label):
    return (0, label, "") if isinstance(label, (int, float)) else (1, 0, str(label))


def class_models_from_dataset(
    dataset: Dataset, priors: Optional[dict] = None, total_prior: float = 1.0
) -> list:
    """Group a labeled dataset into one ClassModel per class.

    Priors default to ``total_prior`` split uniformly over the classes.
    """
    labels: Sequence = dataset.classes
    if not labels:
        raise EmptyClassError("dataset has no labeled instances")
    models = []
    for lab in labels:
        members = dataset.by_label(lab)
        prior = priors[lab] if priors else total_prior / len(labels)
        models.append(ClassModel(lab, tuple(members), prior))
    return models
