"""Doubly robust single-index estimation of heterogeneous treatment effects."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BootstrapDegeneracyError,
    HTEError,
    InputError,
    NonConvergenceError,
    NumericError,
    ReplicationFailureError,
    SingularCovarianceError,
    SingularDesignError,
)
from .hermite import LinkCoefficients, eval_basis, truncated_link_eval  # noqa: E402
from .inference import bootstrap_inference, plug_in_report, wald_interval  # noqa: E402
from .nuisance import ObservationFrame, fit_outcome_arm, fit_propensity  # noqa: E402
from .pipeline import PipelineConfig, fit_pipeline  # noqa: E402
from .pseudo import aipw_pseudo_outcome  # noqa: E402
from .single_index import FitOptions, fit_single_index, predict_cate  # noqa: E402

__all__ = [
    "BootstrapDegeneracyError",
    "FitOptions",
    "HTEError",
    "InputError",
    "LinkCoefficients",
    "NonConvergenceError",
    "NumericError",
    "ObservationFrame",
    "PipelineConfig",
    "ReplicationFailureError",
    "SingularCovarianceError",
    "SingularDesignError",
    "aipw_pseudo_outcome",
    "bootstrap_inference",
    "eval_basis",
    "fit_outcome_arm",
    "fit_pipeline",
    "fit_propensity",
    "fit_single_index",
    "plug_in_report",
    "predict_cate",
    "truncated_link_eval",
    "wald_interval",
]
