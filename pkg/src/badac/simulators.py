"""Seeded synthetic curve classes, compact anomalies and noise regimes.

Random streams
--------------
Every draw comes from numpy's Philox4x64-10 counter-based bit generator keyed
by ``SeedSequence(seed, spawn_key=key)``, where ``key`` names the purpose of
the stream (split, instance index, parameters vs. noise).  Curve parameters
and noise realisations therefore live on separate substreams: re-drawing the
noise of an instance never changes its underlying curve.  The generator name
recorded in dataset metadata is :data:`GENERATOR_NAME`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from badac.core import CovarianceModel, Dataset, Instance
from badac.errors import ConfigError, DimensionMismatchError, NonPositiveSigmaError

GENERATOR_NAME = "numpy-philox4x64-10/seedsequence-spawnkey/v1"

# spawn-key prefixes
SPLIT_TRAIN = 0
SPLIT_TEST = 1
SPLIT_EXTRA = 2
PURPOSE_PARAMS = 0
PURPOSE_NOISE = 1
PURPOSE_SHUFFLE = 2


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under ``seed``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def uniform_grid(m: int = 50, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    return np.linspace(lo, hi, m)


# ---------------------------------------------------------------------------
# curve classes
# ---------------------------------------------------------------------------


def _sine(x, p):
    return np.sin(p["omega"] * x)


def _quadratic(x, p):
    return p["alpha"] * x**2 + p["beta"] * x + p["gamma"]


def _step(x, p):
    return np.where(x <= p["x0"], p["h"], 0.0)


def _bump(x, amplitude, centre, width):
    return amplitude * np.exp(-(((x - centre) / width) ** 2))


def _broad_gaussian(x, p):
    return _bump(x, p["A"], p["mu"], p["w"])


def _sine_sum(x, p):
    return 0.2 * sum(np.sin(p[f"omega{k}"] * x) for k in range(1, 6))


def _sine_with_bump(x, p):
    return np.sin(p["omega"] * x) + _bump(x, p["A"], p["mu"], p["w"])


@dataclass(frozen=True)
class ClassSpec:
    """Functional form and parameter distributions of one simulated class.

    ``params`` maps a parameter name to ("normal", mean, std) or
    ("uniform", lo, hi).  Parameters are drawn in the listed order.
    """

    table: int
    class_id: int
    kind: str
    func: Callable = field(repr=False)
    params: tuple = ()
    positive: tuple = ()

    def draw_params(self, rng: np.random.Generator) -> dict:
        out = {}
        for name, (dist, a, b) in self.params:
            while True:
                value = float(rng.normal(a, b)) if dist == "normal" else float(rng.uniform(a, b))
                if name not in self.positive or value > 0.0:
                    break
            out[name] = value
        return out


TABLE1 = {
    0: ClassSpec(1, 0, "inlier", _sine, (("omega", ("normal", 5.0, 2.0)),)),
    1: ClassSpec(
        1,
        1,
        "inlier",
        _quadratic,
        (
            ("alpha", ("normal", 0.5, 0.2)),
            ("beta", ("normal", 0.5, 0.2)),
            ("gamma", ("normal", 0.0, 0.2)),
        ),
    ),
    2: ClassSpec(1, 2, "outlier", _step, (("h", ("normal", 1.0, 0.3)), ("x0", ("normal", 0.5, 0.2)))),
    3: ClassSpec(
        1,
        3,
        "outlier",
        _broad_gaussian,
        (("A", ("normal", 0.5, 0.2)), ("mu", ("normal", 0.1, 0.05)), ("w", ("normal", 1.0, 0.5))),
    ),
    4: ClassSpec(1, 4, "outlier", _sine_sum, tuple((f"omega{k}", ("normal", 30.0, 20.0)) for k in range(1, 6))),
}

TABLE2 = {
    0: TABLE1[0],
    1: TABLE1[1],
    2: ClassSpec(
        2,
        2,
        "outlier",
        _sine_with_bump,
        (
            ("omega", ("normal", 5.0, 2.0)),
            ("A", ("normal", 1.5, 0.5)),
            ("mu", ("uniform", 0.0, 1.0)),
            ("w", ("normal", 0.03, 0.01)),
        ),
        positive=("w",),
    ),
    3: ClassSpec(
        2,
        3,
        "outlier",
        _sine_with_bump,
        (
            ("omega", ("normal", 5.0, 2.0)),
            ("A", ("normal", -1.5, 0.5)),
            ("mu", ("uniform", 0.0, 1.0)),
            ("w", ("normal", 0.03, 0.01)),
        ),
        positive=("w",),
    ),
}

CLASS_SIGMAS = {0: 0.3, 1: 0.5, 2: 0.3, 3: 0.3, 4: 0.3}


def generate_curve(
    spec: ClassSpec,
    grid: np.ndarray,
    rng: np.random.Generator,
    overrides: Optional[Mapping[str, float]] = None,
    sigma: float = 1.0,
) -> tuple:
    """Noiseless curve of class ``spec`` on ``grid``.

    Returns ``(instance, params)``.  The instance carries placeholder sigmas
    (``sigma``) until a noise model is applied.  ``overrides`` pins individual
    parameters after drawing, so the stream position does not depend on them.
    """
    params = spec.draw_params(rng)
    if overrides:
        params.update(overrides)
    grid = np.asarray(grid, dtype=np.float64)
    values = spec.func(grid, params)
    return Instance(grid, values, np.full(grid.shape, sigma), spec.class_id), params


def base_sine_of(params: Mapping[str, float], grid: np.ndarray) -> np.ndarray:
    """The class-0 sine underlying a compact anomaly with the given parameters."""
    return np.sin(params["omega"] * np.asarray(grid))


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------


def add_gaussian_noise(inst: Instance, sigma: float, rng: np.random.Generator) -> Instance:
    """i.i.d. N(0, sigma^2) noise; the reported error equals sigma."""
    if not sigma > 0.0:
        raise NonPositiveSigmaError("noise sigma must be positive")
    noise = rng.normal(0.0, sigma, size=inst.m)
    return Instance(inst.grid, inst.values + noise, np.full(inst.m, sigma), inst.label)


def add_mixture_noise(
    inst: Instance,
    sigma: float,
    rng: np.random.Generator,
    fraction: float = 0.2,
    inflation: float = 5.0,
) -> Instance:
    """Per point: N(0, sigma^2) with prob 1-fraction, else N(0, (inflation*sigma)^2).

    The reported error stays sigma whichever component was drawn.
    """
    if not sigma > 0.0:
        raise NonPositiveSigmaError("noise sigma must be positive")
    wide = rng.random(inst.m) < fraction
    scale = np.where(wide, inflation * sigma, sigma)
    noise = rng.standard_normal(inst.m) * scale
    return Instance(inst.grid, inst.values + noise, np.full(inst.m, sigma), inst.label)


def wedding_cake_covariance(m: int, sigma: float = 0.3, step: float = 0.1, levels: int = 5) -> CovarianceModel:
    """C_ij = sigma^2 delta_ij + step * (floor(min(i, j) / (m / levels)) + 1), 0-based i, j."""
    if m < levels:
        raise DimensionMismatchError(f"need at least {levels} points, got {m}")
    idx = np.arange(m)
    lower = np.minimum.outer(idx, idx)
    n_ij = np.floor(lower / (m / levels)) + 1.0
    mat = step * n_ij + np.diag(np.full(m, sigma**2))
    return CovarianceModel(mat)


def add_correlated_noise(inst: Instance, cov: CovarianceModel, rng: np.random.Generator) -> Instance:
    """Noise L z with L the Cholesky factor of ``cov``; reported errors are sqrt(diag(cov))."""
    if cov.m != inst.m:
        raise DimensionMismatchError(f"covariance is {cov.m}x{cov.m}, instance has {inst.m} points")
    noise = cov.factor @ rng.standard_normal(inst.m)
    return Instance(inst.grid, inst.values + noise, np.sqrt(np.diag(cov.matrix)), inst.label)


@dataclass(frozen=True)
class NoiseSpec:
    regime: str = "gaussian"
    class_sigmas: Mapping = field(default_factory=lambda: dict(CLASS_SIGMAS))
    mixture_fraction: float = 0.2
    mixture_inflation: float = 5.0
    correlation: Optional[CovarianceModel] = None
    correlated_classes: tuple = (0,)

    def __post_init__(self):
        if self.regime not in ("gaussian", "mixture", "correlated"):
            raise ConfigError(f"unknown noise regime {self.regime!r}")
        if any(s <= 0 for s in self.class_sigmas.values()):
            raise ConfigError("class sigmas must be positive")
        if not (0.0 < self.mixture_fraction < 1.0) or self.mixture_inflation <= 1.0:
            raise ConfigError("mixture fraction must be in (0,1) and inflation > 1")
        if self.regime == "correlated" and self.correlation is None:
            raise ConfigError("correlated regime needs a covariance")

    def apply(self, inst: Instance, noise_class: int, rng: np.random.Generator) -> Instance:
        sigma = self.class_sigmas[noise_class]
        if self.regime == "mixture":
            return add_mixture_noise(inst, sigma, rng, self.mixture_fraction, self.mixture_inflation)
        if self.regime == "correlated" and noise_class in self.correlated_classes:
            return add_correlated_noise(inst, self.correlation, rng)
        return add_gaussian_noise(inst, sigma, rng)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

EXPERIMENTS = {
    # kind: (class table, outlier classes, noise regime)
    "gaussian": (TABLE1, (2, 3, 4), "gaussian"),
    "compact": (TABLE2, (2, 3), "gaussian"),
    "non_gaussian": (TABLE1, (2, 3, 4), "mixture"),
    "correlated": (TABLE1, (2, 3, 4), "correlated"),
}


def noise_spec_for(kind: str, m: int, class_sigmas: Optional[Mapping] = None) -> NoiseSpec:
    sigmas = dict(CLASS_SIGMAS)
    sigmas.update(class_sigmas or {})
    regime = EXPERIMENTS[kind][2]
    if regime == "correlated":
        return NoiseSpec("correlated", sigmas, correlation=wedding_cake_covariance(m, sigmas[0]))
    return NoiseSpec(regime, sigmas)


def _noise_class(table: dict, class_id: int) -> int:
    # compact anomalies ride on a class-0 sine and share its noise level
    return 0 if table is TABLE2 and class_id in (2, 3) else class_id


def simulate_instance(
    kind: str,
    class_id: int,
    seed: int,
    key: tuple,
    grid: np.ndarray,
    noise: Optional[NoiseSpec] = None,
    realization: int = 0,
) -> Instance:
    """One noisy instance; parameters from stream key+(params,), noise from key+(noise, realization)."""
    table = EXPERIMENTS[kind][0]
    noise = noise or noise_spec_for(kind, len(grid))
    spec = table[class_id]
    curve, _ = generate_curve(spec, grid, stream(seed, *key, PURPOSE_PARAMS))
    return noise.apply(curve, _noise_class(table, class_id), stream(seed, *key, PURPOSE_NOISE, realization))


def split_counts(total: int, classes: tuple) -> dict:
    """Even split, remainder assigned round-robin from the first class."""
    base, rem = divmod(total, len(classes))
    return {c: base + (1 if i < rem else 0) for i, c in enumerate(classes)}


def outlier_count(n_test: int, fraction: float) -> int:
    return int(math.floor(fraction * n_test + 0.5))


def generate_dataset(
    kind: str,
    n_train: int,
    n_test: int,
    outlier_fraction: float = 0.01,
    grid_points: int = 50,
    seed: int = 0,
    class_sigmas: Optional[Mapping] = None,
) -> tuple:
    """Training set (classes 0 and 1 only) and test set with outliers, both seeded.

    ``class_sigmas`` overrides individual per-class noise levels.
    """
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    if not (0.0 <= outlier_fraction < 1.0):
        raise ConfigError(f"outlier fraction must be in [0, 1), got {outlier_fraction}")
    if n_train < 2 or n_test < 1 or grid_points < 5:
        raise ConfigError("need n_train >= 2, n_test >= 1 and grid_points >= 5")
    _, outlier_classes, _ = EXPERIMENTS[kind]
    grid = uniform_grid(grid_points)
    noise = noise_spec_for(kind, grid_points, class_sigmas)

    train_labels = []
    for c, k in split_counts(n_train, (0, 1)).items():
        train_labels += [c] * k
    train = [simulate_instance(kind, c, seed, (SPLIT_TRAIN, i), grid, noise) for i, c in enumerate(train_labels)]

    n_out = outlier_count(n_test, outlier_fraction)
    test_labels = []
    for c, k in split_counts(n_test - n_out, (0, 1)).items():
        test_labels += [c] * k
    for c, k in split_counts(n_out, outlier_classes).items():
        test_labels += [c] * k
    order = stream(seed, SPLIT_TEST, PURPOSE_SHUFFLE).permutation(len(test_labels))
    test_labels = [test_labels[i] for i in order]
    test = [simulate_instance(kind, c, seed, (SPLIT_TEST, i), grid, noise) for i, c in enumerate(test_labels)]

    meta = {
        "generator": GENERATOR_NAME,
        "seed": int(seed),
        "kind": kind,
        "n_train": n_train,
        "n_test": n_test,
        "n_outliers": n_out,
        "outlier_classes": list(outlier_classes),
        "grid_points": grid_points,
        "class_sigmas": {str(k): v for k, v in sorted(noise.class_sigmas.items())},
        "grid": [float(x) for x in grid],
    }
    return (
        Dataset(train, (0, 1), dict(meta, split="train")),
        Dataset(test, tuple([0, 1] + list(outlier_classes)), dict(meta, split="test")),
    )
