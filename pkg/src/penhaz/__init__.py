"""Penalized-likelihood estimation of a proportional-hazards model with a spline baseline hazard."""

__version__ = "0.1.0"

from penhaz.splines import SplineSpec, make_knots, msplines_eval, isplines_eval, penalty_matrix  # noqa: E402
from penhaz.model import ModelParams, SurvivalDataset, penalized_loglik  # noqa: E402
from penhaz.estimator import FitResult, fit_fixed_kappa, lcv_a, select_kappa  # noqa: E402
from penhaz.variance import Method, estimate_variance, hazard_band, survival_band, beta_intervals  # noqa: E402

__all__ = [
    "SplineSpec", "make_knots", "msplines_eval", "isplines_eval", "penalty_matrix",
    "ModelParams", "SurvivalDataset", "penalized_loglik",
    "FitResult", "fit_fixed_kappa", "lcv_a", "select_kappa",
    "Method", "estimate_variance", "hazard_band", "survival_band", "beta_intervals",
]
