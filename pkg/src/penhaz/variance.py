"""Variance estimators for the penalized estimate and pointwise confidence bands.

All matrices estimate ``Var(xi_hat)`` directly: they are built from the
unnormalized Hessians and raw score outer products, so no extra ``1/n``
appears in the band formulas.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from penhaz.estimator import FitResult, NumericalSingularityError
from penhaz.splines import SplineSpec, isplines_eval, msplines_eval

EIG_TOL = 1e-10


class Method(str, enum.Enum):
    BAYES = "bayes"
    SANDWICH = "sandwich"
    NP_SANDWICH = "np-sandwich"


class IndefiniteHessianError(NumericalSingularityError):
    pass


class OutOfRangeError(ValueError):
    pass


class NoCovariatesError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VarianceEstimate:
    method: Method
    matrix: np.ndarray
    condition: float
    boundary: bool = False

    def theta_block(self, p: int) -> np.ndarray:
        return self.matrix[p:, p:]


@dataclass(frozen=True, eq=False)
class CurveBand:
    times: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sd: np.ndarray
    level: float
    truncated: bool = False
    boundary: bool = False

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)


def z_value(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def _inverse(H: np.ndarray, what: str):
    cond = float(np.linalg.cond(H))
    if not np.isfinite(cond) or cond > 1e15:
        raise NumericalSingularityError(f"{what} is singular", cond)
    inv = np.linalg.inv(H)
    return 0.5 * (inv + inv.T), cond


def _to_theta(fit: FitResult, V_zeta: np.ndarray) -> np.ndarray:
    # Chain rule back to (beta, theta): Var(xi) = J Var(beta, zeta) J with J = diag(1, 2 zeta).
    jac = fit.jacobian
    V = V_zeta * np.outer(jac, jac)
    return 0.5 * (V + V.T)


def var_bayes(fit: FitResult) -> VarianceEstimate:
    """Inverse penalized Hessian, taken in ``(beta, zeta)`` and mapped to ``(beta, theta)``.

    At an interior maximum this is exactly ``H_pL^{-1}``.
    """
    if not fit.converged:
        raise ValueError("variance requested for a non-converged fit")
    H = fit.H_pL_zeta
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= EIG_TOL * max(abs(eig[-1]), 1e-300):
        raise IndefiniteHessianError(
            f"H_pL is not positive definite (smallest eigenvalue {eig[0]:.3g})",
            abs(eig[-1] / eig[0]) if eig[0] else np.inf,
        )
    inv, cond = _inverse(H, "H_pL")
    return VarianceEstimate(Method.BAYES, _to_theta(fit, inv), cond, fit.boundary)


def var_sandwich(fit: FitResult, penalized: bool = True) -> VarianceEstimate:
    """Bread-meat-bread estimator evaluated at the penalized maximum.

    ``penalized=True`` uses ``H_pL`` with scores ``v_i + kappa dJ``;
    ``penalized=False`` uses the unpenalized Hessian and plain scores.
    """
    if not fit.converged:
        raise ValueError("variance requested for a non-converged fit")
    if penalized:
        U = fit.scores_zeta + fit.kappa * fit.penalty_grad_zeta[None, :]
        bread, cond = _inverse(fit.H_pL_zeta, "H_pL")
        method = Method.SANDWICH
    else:
        U = fit.scores_zeta
        bread, cond = _inverse(fit.H_L_zeta, "H_L")
        method = Method.NP_SANDWICH
    V = bread @ (U.T @ U) @ bread
    return VarianceEstimate(method, _to_theta(fit, V), cond, fit.boundary)


def estimate_variance(fit: FitResult, method) -> VarianceEstimate:
    method = Method(method)
    if method is Method.BAYES:
        return var_bayes(fit)
    return var_sandwich(fit, penalized=method is Method.SANDWICH)


def _check_times(spec: SplineSpec, times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    eps = 1e-12 * (spec.upper - spec.lower)
    if np.any(times < spec.lower - eps) or np.any(times > spec.upper + eps):
        raise OutOfRangeError(
            f"evaluation times must lie in [{spec.lower}, {spec.upper}]"
        )
    return np.clip(times, spec.lower, spec.upper)


def _quadratic_sd(G: np.ndarray, V: np.ndarray) -> np.ndarray:
    var = np.einsum("ij,jk,ik->i", G, V, G)
    return np.sqrt(np.maximum(var, 0.0))


def hazard_band(fit: FitResult, var: VarianceEstimate, spec: SplineSpec, times, level=0.95) -> CurveBand:
    """Pointwise band for the baseline hazard; lower bound truncated at 0."""
    times = _check_times(spec, times)
    M = msplines_eval(spec, times)
    est = M @ fit.theta
    sd = _quadratic_sd(M, var.theta_block(fit.p))
    half = z_value(level) * sd
    lower = est - half
    truncated = bool(np.any(lower < 0))
    return CurveBand(times, est, np.maximum(lower, 0.0), est + half, sd, level, truncated, var.boundary)


def survival_gradient(theta, I: np.ndarray) -> np.ndarray:
    """Rows of ``d S(t) / d theta = -I(t) S(t)``."""
    surv = np.exp(-(I @ theta))
    return -I * surv[:, None]


def survival_band(fit: FitResult, var: VarianceEstimate, spec: SplineSpec, times, level=0.95) -> CurveBand:
    """Pointwise delta-method band for the baseline survival, clipped to [0, 1]."""
    times = _check_times(spec, times)
    I = isplines_eval(spec, times)
    est = np.exp(-(I @ fit.theta))
    sd = _quadratic_sd(survival_gradient(fit.theta, I), var.theta_block(fit.p))
    half = z_value(level) * sd
    lower, upper = est - half, est + half
    truncated = bool(np.any(lower < 0) or np.any(upper > 1))
    return CurveBand(
        times, est, np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0), sd, level, truncated, var.boundary
    )


@dataclass(frozen=True)
class CoefInterval:
    estimate: float
    sd: float
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def beta_intervals(fit: FitResult, var: VarianceEstimate, level=0.95) -> list[CoefInterval]:
    p = fit.p
    if p == 0:
        raise NoCovariatesError("model has no regression coefficients")
    z = z_value(level)
    out = []
    for j in range(p):
        sd = float(np.sqrt(max(var.matrix[j, j], 0.0)))
        b = float(fit.beta[j])
        out.append(CoefInterval(b, sd, b - z * sd, b + z * sd))
    return out
