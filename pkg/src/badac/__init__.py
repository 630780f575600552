"""Bayesian anomaly detection and classification for data with error bars."""

from badac.core import (
    ClassModel,
    CovarianceModel,
    Dataset,
    Instance,
    TemplateModel,
    merge_into_class,
    validate_instance,
)
from badac.engine import (
    ANOMALY,
    PosteriorReport,
    TopHatPrior,
    anomaly_log_likelihood,
    calibrate_tophat_by_contamination,
    class_log_evidence,
    compress_to_template,
    correlated_log_likelihood,
    make_tophat_from_data,
    online_update,
    pairwise_log_likelihood,
    posterior,
    quadrature_oracle,
    rank_anomalies,
    template_log_likelihood,
)

__version__ = "0.1.0"
