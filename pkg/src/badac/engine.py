"""Class evidences, anomaly likelihoods and posteriors for noisy instances.

Every test/train pair is compared point by point after marginalising the
unknown noiseless value under flat priors, which for Gaussian errors gives a
Gaussian in the difference with the two variances added.  A class evidence is
the mean of those pair likelihoods over the training members (a kernel
density estimate whose bandwidths are the error bars).  Everything is kept in
log space.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from badac.core import (
    ClassModel,
    CovarianceModel,
    Dataset,
    Instance,
    TemplateModel,
    check_grid,
    merge_into_class,
    psd_cholesky,
)
from badac.errors import (
    BoundsTooNarrowError,
    DegenerateRangeError,
    DimensionMismatchError,
    EmptyClassError,
    EmptyDatasetError,
    PriorSumError,
)

LOG_2PI = math.log(2.0 * math.pi)
ANOMALY = "anomaly"
PRIOR_SUM_TOL = 1e-9
# tests are scored in fixed-size blocks so results do not depend on the thread count
BLOCK = 32


# ---------------------------------------------------------------------------
# pairwise and class-level likelihoods
# ---------------------------------------------------------------------------


def _gauss_logpdf_sum(resid, var, axis=-1):
    return -0.5 * np.sum(LOG_2PI + np.log(var) + resid * resid / var, axis=axis)


def pairwise_log_likelihood(test: Instance, train: Instance) -> float:
    """Log-likelihood of ``test`` given one training instance, both noisy.

    Equals sum_j log N(d_j | y_j, sd_j^2 + sy_j^2).
    """
    check_grid(test, train.grid)
    var = test.sigmas**2 + train.sigmas**2
    return float(_gauss_logpdf_sum(test.values - train.values, var))


def class_log_evidence(test: Instance, model: ClassModel) -> float:
    """log[(1/n) sum_i exp(pairwise_log_likelihood(test, y_i))] over the class members."""
    if model.n == 0:
        raise EmptyClassError(f"class {model.class_id!r} is empty")
    check_grid(test, model.grid)
    var = test.sigmas**2 + model.variance_matrix
    pair = _gauss_logpdf_sum(test.values - model.values_matrix, var)
    return float(logsumexp(pair) - math.log(model.n))


def class_log_evidence_batch(values: np.ndarray, variances: np.ndarray, model: ClassModel) -> np.ndarray:
    """Vectorised class_log_evidence for a (T, m) block of test values/variances."""
    y = model.values_matrix[None, :, :]
    vy = model.variance_matrix[None, :, :]
    out = np.empty(values.shape[0])
    for start in range(0, values.shape[0], BLOCK):
        d = values[start:start + BLOCK, None, :]
        var = variances[start:start + BLOCK, None, :] + vy
        resid = d - y
        pair = _gauss_logpdf_sum(resid, var)
        out[start:start + BLOCK] = logsumexp(pair, axis=1) - math.log(model.n)
    return out


# ---------------------------------------------------------------------------
# anomaly hypothesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TopHatPrior:
    """Uniform density 1/(upper - lower) per point on [lower, upper]."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)) or self.upper <= self.lower:
            raise DegenerateRangeError(f"top-hat needs upper > lower, got [{self.lower}, {self.upper}]")

    @property
    def per_point_log_density(self) -> float:
        return -math.log(self.upper - self.lower)


def anomaly_log_likelihood(test: Instance, prior: TopHatPrior) -> float:
    """m * log(1/(b-a)) if every value lies in [a, b], otherwise -inf."""
    vals = test.values
    if np.any(vals < prior.lower) or np.any(vals > prior.upper):
        return -math.inf
    return test.m * prior.per_point_log_density


def anomaly_log_likelihood_batch(values: np.ndarray, prior: TopHatPrior) -> np.ndarray:
    inside = np.all((values >= prior.lower) & (values <= prior.upper), axis=1)
    return np.where(inside, values.shape[1] * prior.per_point_log_density, -np.inf)


def make_tophat_from_data(*datasets: Dataset) -> TopHatPrior:
    """Top-hat covering twice the observed value range, centred on its midpoint."""
    chunks = [inst.values for ds in datasets for inst in ds.instances]
    if not chunks:
        raise EmptyDatasetError("cannot derive a top-hat from an empty dataset")
    allv = np.concatenate(chunks)
    lo, hi = float(np.min(allv)), float(np.max(allv))
    width = hi - lo
    if width <= 0.0:
        raise DegenerateRangeError("observed values have zero range")
    mid = 0.5 * (lo + hi)
    return TopHatPrior(mid - width, mid + width)


def calibrate_tophat_by_contamination(known_evidence_sums: Sequence[float], fraction: float) -> float:
    """Anomaly log-likelihood height that flags the ``fraction`` least likely instances.

    ``known_evidence_sums`` are log sum_k P_k P(tau_k) over the test set.  The
    returned value is the nearest-rank order statistic: the ceil(fraction*N)-th
    smallest sum, so that many instances sit at or below it.
    """
    sums = np.sort(np.asarray(known_evidence_sums, dtype=np.float64))
    if sums.size == 0:
        raise EmptyDatasetError("no evidence sums to calibrate against")
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    k = max(1, math.ceil(fraction * sums.size - 1e-9))
    return float(sums[min(k, sums.size) - 1])


# ---------------------------------------------------------------------------
# posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorReport:
    class_log_likelihood: dict
    class_log_evidence: dict
    anomaly_log_likelihood: Optional[float]
    normalized_probs: dict
    anomaly_score: float

    def argmax(self) -> Hashable:
        """Most probable hypothesis; ties go to the earliest key (classes first, then anomaly)."""
        best_key, best = None, -math.inf
        for key, p in self.normalized_probs.items():
            if best_key is None or p > best:
                best_key, best = key, p
        return best_key

    def class_argmax(self) -> Hashable:
        """Most probable known class ignoring the anomaly hypothesis."""
        best_key, best = None, -math.inf
        for key, lev in self.class_log_evidence.items():
            if best_key is None or lev > best:
                best_key, best = key, lev
        return best_key


AnomalySpec = Union[TopHatPrior, float, None]


def _resolve_priors(models, anomaly, anomaly_prior, renormalize):
    priors = np.array([mdl.prior for mdl in models], dtype=np.float64)
    if anomaly is None:
        a_prior = 0.0
    elif anomaly_prior is None:
        a_prior = 1.0 - priors.sum()
        if a_prior <= PRIOR_SUM_TOL:
            raise PriorSumError("class priors leave no mass for the anomaly hypothesis")
    else:
        a_prior = float(anomaly_prior)
    total = priors.sum() + a_prior
    if renormalize:
        priors, a_prior = priors / total, a_prior / total
    elif abs(total - 1.0) > PRIOR_SUM_TOL:
        raise PriorSumError(f"priors sum to {total}, expected 1")
    return priors, a_prior


def _report_from_row(models, loglik, a_loglik, log_priors, log_a_prior):
    ids = [mdl.class_id for mdl in models]
    class_lev = loglik + log_priors
    known = float(logsumexp(class_lev))
    terms = list(class_lev)
    if a_loglik is not None:
        terms.append(a_loglik + log_a_prior)
    terms = np.asarray(terms)
    log_z = logsumexp(terms)
    probs = np.exp(terms - log_z)
    # exp rounding can leave the sum a few ulps away from one
    probs = probs / probs.sum()
    keys = ids + ([ANOMALY] if a_loglik is not None else [])
    return PosteriorReport(
        class_log_likelihood={k: float(v) for k, v in zip(ids, loglik)},
        class_log_evidence={k: float(v) for k, v in zip(ids, class_lev)},
        anomaly_log_likelihood=None if a_loglik is None else float(a_loglik),
        normalized_probs={k: float(p) for k, p in zip(keys, probs)},
        anomaly_score=-known,
    )


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def posterior(
    test: Instance,
    models: Sequence[ClassModel],
    anomaly: AnomalySpec = None,
    anomaly_prior: Optional[float] = None,
    renormalize_priors: bool = False,
) -> PosteriorReport:
    """Normalised class (and optional anomaly) probabilities for one instance.

    ``anomaly`` is a TopHatPrior, a fixed anomaly log-likelihood (for example a
    contamination-calibrated height) or None for classification only.  Priors
    must sum to one unless ``renormalize_priors`` is set.
    """
    return posterior_batch([test], models, anomaly, anomaly_prior, renormalize_priors)[0]


def score_matrix(tests: Sequence[Instance], models: Sequence[ClassModel], threads: int = 1) -> np.ndarray:
    """(T, K) array of class_log_evidence for every test instance and class."""
    if not tests:
        return np.empty((0, len(models)))
    grid = models[0].grid
    for inst in tests:
        check_grid(inst, grid)
    for mdl in models:
        check_grid(mdl.instances[0], grid)
    values = np.stack([inst.values for inst in tests])
    variances = np.stack([inst.sigmas for inst in tests]) ** 2
    return score_arrays(values, variances, models, threads)


def score_arrays(values: np.ndarray, variances: np.ndarray, models: Sequence[ClassModel], threads: int = 1) -> np.ndarray:
    starts = list(range(0, values.shape[0], BLOCK))

    def work(start):
        sl = slice(start, start + BLOCK)
        return np.column_stack([class_log_evidence_batch(values[sl], variances[sl], mdl) for mdl in models])

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(work, starts))
    else:
        blocks = [work(s) for s in starts]
    return np.vstack(blocks) if blocks else np.empty((0, len(models)))


def anomaly_log_likelihoods(tests: Sequence[Instance], anomaly: AnomalySpec) -> Optional[np.ndarray]:
    if anomaly is None:
        return None
    if isinstance(anomaly, TopHatPrior):
        return anomaly_log_likelihood_batch(np.stack([inst.values for inst in tests]), anomaly)
    return np.full(len(tests), float(anomaly))


def posterior_batch(
    tests: Sequence[Instance],
    models: Sequence[ClassModel],
    anomaly: AnomalySpec = None,
    anomaly_prior: Optional[float] = None,
    renormalize_priors: bool = False,
    threads: int = 1,
) -> list:
    priors, a_prior = _resolve_priors(models, anomaly, anomaly_prior, renormalize_priors)
    loglik = score_matrix(tests, models, threads)
    a_ll = anomaly_log_likelihoods(tests, anomaly)
    log_priors = np.array([_log(p) for p in priors])
    log_a = _log(a_prior)
    return [
        _report_from_row(models, loglik[t], None if a_ll is None else a_ll[t], log_priors, log_a)
        for t in range(len(tests))
    ]


def anomaly_scores(loglik: np.ndarray, priors: Sequence[float]) -> np.ndarray:
    """-log sum_k P_k P(tau_k) for each row of a (T, K) log-likelihood array."""
    log_priors = np.log(np.asarray(priors, dtype=np.float64))
    return -logsumexp(loglik + log_priors, axis=1)


def rank_anomalies(tests: Sequence[Instance], models: Sequence[ClassModel], threads: int = 1) -> list:
    """(index, anomaly_score) pairs, most anomalous first; ties by ascending index."""
    if not tests:
        raise EmptyDatasetError("nothing to rank")
    scores = anomaly_scores(score_matrix(tests, models, threads), [m.prior for m in models])
    order = sorted(range(len(tests)), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# online learning
# ---------------------------------------------------------------------------


def _next_class_id(models):
    ints = [m.class_id for m in models if isinstance(m.class_id, int)]
    return max(ints) + 1 if ints else len(models)


def online_update(
    models: Sequence[ClassModel],
    test: Instance,
    report: PosteriorReport,
    admission_threshold: float = 0.99,
    new_class_id: Optional[Hashable] = None,
) -> list:
    """Grow the model set from one scored instance.

    An instance whose anomaly probability beats every class becomes a new
    single-member class; class priors are re-spread uniformly while keeping
    their total.  Otherwise the instance joins its most probable class only
    when that probability exceeds ``admission_threshold``.
    """
    models = list(models)
    probs = report.normalized_probs
    class_probs = [probs[m.class_id] for m in models]
    p_anom = probs.get(ANOMALY)
    if p_anom is not None and all(p_anom > p for p in class_probs):
        cid = _next_class_id(models) if new_class_id is None else new_class_id
        total = sum(m.prior for m in models)
        share = total / (len(models) + 1)
        grown = [m.with_prior(share) for m in models]
        grown.append(ClassModel(cid, (test.with_label(cid),), share))
        return grown
    best = max(range(len(models)), key=lambda k: (class_probs[k], -k))
    if class_probs[best] > admission_threshold:
        models[best] = merge_into_class(models[best], test.with_label(models[best].class_id))
    return models


# ---------------------------------------------------------------------------
# templates and correlated noise
# ---------------------------------------------------------------------------


def compress_to_template(model: ClassModel) -> TemplateModel:
    """Inverse-variance weighted mean and its standard deviation at each point."""
    precision = 1.0 / model.variance_matrix
    var_hat = 1.0 / precision.sum(axis=0)
    mean = var_hat * (precision * model.values_matrix).sum(axis=0)
    return TemplateModel(model.class_id, model.grid, mean, np.sqrt(var_hat), model.prior)


def template_log_likelihood(test: Instance, tmpl: TemplateModel) -> float:
    """sum_j log N(d_j | mean_j, sd_j^2 + template_sigma_j^2)."""
    check_grid(test, tmpl.grid)
    return float(_gauss_logpdf_sum(test.values - tmpl.mean, test.sigmas**2 + tmpl.sigma**2))


def template_score_arrays(values: np.ndarray, variances: np.ndarray, templates: Sequence[TemplateModel]) -> np.ndarray:
    cols = [
        _gauss_logpdf_sum(values - t.mean[None, :], variances + (t.sigma**2)[None, :], axis=1)
        for t in templates
    ]
    return np.column_stack(cols)


def mvn_logpdf(residual: np.ndarray, cov: np.ndarray) -> float:
    """Multivariate normal log-density of ``residual`` via a Cholesky factor."""
    residual = np.asarray(residual, dtype=np.float64)
    chol = psd_cholesky(np.asarray(cov, dtype=np.float64))
    z = solve_triangular(chol, residual, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (residual.size * LOG_2PI + logdet + z @ z))


def correlated_log_likelihood(test: Instance, tmpl: TemplateModel, cov: CovarianceModel) -> float:
    """Template likelihood with an extra intra-instance covariance C added to the diagonal errors."""
    if cov.m != test.m:
        raise DimensionMismatchError(f"covariance is {cov.m}x{cov.m}, instance has {test.m} points")
    check_grid(test, tmpl.grid)
    total = cov.matrix + np.diag(test.sigmas**2 + tmpl.sigma**2)
    return mvn_logpdf(test.values - tmpl.mean, total)


# ---------------------------------------------------------------------------
# numerical check of the marginalisation
# ---------------------------------------------------------------------------

TAIL_MASS_LIMIT = 1e-12


def quadrature_oracle(
    d: float,
    sigma_d: float,
    y_o: float,
    sigma_y: float,
    integration_bounds: Optional[tuple] = None,
    step: Optional[float] = None,
    log: bool = False,
) -> float:
    """Integrate N(d | t, sigma_d) N(y_o | t, sigma_y) over t with composite Simpson.

    Default bounds extend ten combined sigmas beyond both points; the step is at
    most min(sigma_d, sigma_y)/50.  Returns the log of the integral when
    ``log`` is set (avoids underflow for distant points).
    """
    combined = math.hypot(sigma_d, sigma_y)
    if integration_bounds is None:
        lo, hi = min(d, y_o) - 10.0 * combined, max(d, y_o) + 10.0 * combined
    else:
        lo, hi = map(float, integration_bounds)
    # the integrand is a Gaussian bump in t; estimate how much of it the bounds cut off
    prec = sigma_d**-2 + sigma_y**-2
    centre = (d * sigma_d**-2 + y_o * sigma_y**-2) / prec
    width = prec**-0.5
    tail = 0.5 * math.erfc((centre - lo) / (width * math.sqrt(2.0))) + 0.5 * math.erfc(
        (hi - centre) / (width * math.sqrt(2.0))
    )
    if hi <= lo or tail > TAIL_MASS_LIMIT:
        raise BoundsTooNarrowError(f"bounds [{lo}, {hi}] miss {tail:.3g} of the integrand mass")

    h_max = min(sigma_d, sigma_y) / 50.0 if step is None else min(step, min(sigma_d, sigma_y) / 50.0)
    n = math.ceil((hi - lo) / h_max)
    n += n % 2
    t = np.linspace(lo, hi, n + 1)
    h = (hi - lo) / n
    log_f = (
        -0.5 * ((d - t) / sigma_d) ** 2
        - 0.5 * ((y_o - t) / sigma_y) ** 2
        - LOG_2PI
        - math.log(sigma_d)
        - math.log(sigma_y)
    )
    shift = float(np.max(log_f))
    f = np.exp(log_f - shift)
    weights = np.ones(n + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    log_integral = shift + math.log(h / 3.0 * float(weights @ f))
    return log_integral if log else math.exp(log_integral)
