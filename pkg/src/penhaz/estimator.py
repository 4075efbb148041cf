"""Penalized maximum likelihood fits and smoothing-parameter selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from penhaz.model import ModelParams, PenalizedHazardModel, SurvivalDataset
from penhaz.splines import SplineSpec

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-10
KAPPA_BOUNDS = (1e-2, 1e8)
GRID_POINTS = 30


class SingularDesignError(ValueError):
    pass


class NumericalSingularityError(ArithmeticError):
    def __init__(self, msg, condition=math.inf):
        super().__init__(f"{msg} (condition number {condition:.3g})")
        self.condition = condition


class SelectionFailure(RuntimeError):
    def __init__(self, msg, diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class NewtonOptions:
    max_iter: int = 200
    rel_obj_tol: float = 1e-9
    grad_tol: float = 1e-6
    rel_step_tol: float = 1e-8
    max_halvings: int = 60
    max_restarts: int = 10


@dataclass(frozen=True, eq=False)
class FitResult:
    """Penalized maximum at a fixed ``kappa``, with matrices in ``(beta, theta)``.

    ``H_pL`` and ``H_L`` are the (unnormalized) Hessians of minus the penalized
    and unpenalized log-likelihood; ``scores`` holds one row per subject.
    ``jacobian`` is ``d xi / d(beta, zeta) = (1_p, 2 zeta)`` and the ``*_zeta``
    matrices are the exact Hessians in the optimizer's parameterization,
    which stay well defined when some ``theta_k`` sit on the zero boundary.
    """

    params: ModelParams
    kappa: float
    loglik: float
    pen_loglik: float
    H_pL: np.ndarray
    H_L: np.ndarray
    scores: np.ndarray
    penalty_grad: np.ndarray
    jacobian: np.ndarray
    H_pL_zeta: np.ndarray
    H_L_zeta: np.ndarray
    lcv_a: float
    edf: float
    converged: bool
    iterations: int
    grad_norm: float
    boundary: bool
    spec: SplineSpec = field(repr=False)
    n: int = 0

    @property
    def beta(self) -> np.ndarray:
        return self.params.beta

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    @property
    def p(self) -> int:
        return self.params.beta.size

    @property
    def scores_zeta(self) -> np.ndarray:
        return self.scores * self.jacobian[None, :]

    @property
    def penalty_grad_zeta(self) -> np.ndarray:
        return self.penalty_grad * self.jacobian

    @property
    def penalty(self) -> float:
        theta = self.theta
        return float(theta @ self.spec.omega @ theta)

    def diagnostics(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "boundary": self.boundary,
            "pen_loglik": self.pen_loglik,
            "lcv_a": self.lcv_a,
        }


@dataclass(frozen=True, eq=False)
class KappaSearchResult:
    kappa_hat: float
    lcv_curve: list
    fit: FitResult
    at_boundary: bool = False


def default_init(data: SurvivalDataset, spec: SplineSpec) -> ModelParams:
    """``beta = 0`` and a flat ``theta`` with cumulative hazard ``d / n`` at the last time."""
    crude = max(data.n_events, 1) / data.n
    theta = np.full(spec.m, crude / spec.m)
    return ModelParams(np.zeros(data.p), np.sqrt(theta))


def check_design(data: SurvivalDataset):
    if data.p and np.linalg.matrix_rank(data.covariates) < data.p:
        raise SingularDesignError("covariate matrix is not of full column rank")


def _evaluate(model: PenalizedHazardModel, u, kappa):
    p = model.p
    beta, zeta = u[:p], u[p:]
    theta = zeta**2
    terms = model.loglik_terms(beta, theta)
    return float(terms.sum()) - kappa * model.penalty(theta), beta, theta


def zeta_hessian(A, grad, jac, p):
    """Hessian of minus the objective in ``(beta, zeta)`` from its ``(beta, theta)`` pieces.

    ``A`` is minus the theta-Hessian and ``grad`` the theta-gradient; the second
    chain-rule term ``-2 diag(grad_theta)`` comes from ``d2 theta / d zeta2 = 2``.
    """
    N = A * np.outer(jac, jac)
    N[p:, p:] -= np.diag(2.0 * grad[p:])
    return N


def _newton(model: PenalizedHazardModel, kappa, u0, opts: NewtonOptions):
    p = model.p
    u = np.array(u0, dtype=float)
    obj, beta, theta = _evaluate(model, u, kappa)
    if not np.isfinite(obj):
        raise ValueError("initial parameters give zero hazard at an event time")
    converged = False
    it = 0
    g_u = None
    for it in range(1, opts.max_iter + 1):
        zeta = u[p:]
        g = model.gradient(beta, theta, kappa)
        A = model.neg_hessian(beta, theta, kappa)
        jac = np.concatenate([np.ones(p), 2.0 * zeta])
        g_u = jac * g
        N = zeta_hessian(A, g, jac, p)

        # Marquardt-style inflation until the system is positive definite.
        mu = 0.0
        scale = max(np.max(np.abs(np.diag(N))), 1e-12)
        while True:
            try:
                L = np.linalg.cholesky(N + mu * np.eye(N.shape[0]))
                break
            except np.linalg.LinAlgError:
                mu = max(1e-10 * scale, 10.0 * mu)
        step = np.linalg.solve(L.T, np.linalg.solve(L, g_u))

        alpha = 1.0
        for _ in range(opts.max_halvings):
            u_new = u + alpha * step
            obj_new, beta_new, theta_new = _evaluate(model, u_new, kappa)
            if np.isfinite(obj_new) and obj_new >= obj - 1e-12 * abs(obj):
                break
            alpha *= 0.5
        else:
            break

        rel_obj = abs(obj_new - obj) / max(abs(obj), 1e-300)
        rel_step = np.max(np.abs(u_new - u)) / (1.0 + np.max(np.abs(u_new)))
        u, obj, beta, theta = u_new, obj_new, beta_new, theta_new
        g_u = jac_grad(model, beta, theta, u[p:], kappa)
        if (
            rel_obj <= opts.rel_obj_tol
            and np.max(np.abs(g_u)) <= opts.grad_tol * (1.0 + abs(obj))
            and rel_step <= opts.rel_step_tol
        ):
            converged = True
            break
    grad_norm = float(np.max(np.abs(g_u))) if g_u is not None else math.inf
    return u, obj, converged, it, grad_norm


def jac_grad(model, beta, theta, zeta, kappa):
    """Gradient of the penalized log-likelihood in the ``(beta, zeta)`` parameterization."""
    g = model.gradient(beta, theta, kappa)
    g[model.p :] *= 2.0 * zeta
    return g


def lcv_terms(H_pL, scores, penalty_grad, kappa, loglik):
    """Return ``(LCV_a, trace term)``; raises on a singular ``H_pL``.

    ``H_pL`` is taken per subject (divided by ``n``) inside the trace, which
    makes the correction track exact leave-one-out refits; with the raw sum the
    trace would be ``O(p / n**2)`` instead of ``O(p / n)``.
    """
    n = scores.shape[0]
    if n < 2:
        raise ValueError("LCV_a needs at least two subjects")
    H = H_pL / n
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1e15:
        raise NumericalSingularityError("H_pL is singular", cond)
    d = (scores + kappa * penalty_grad[None, :]) / (n - 1)
    K = scores.T @ d / n
    trace = float(np.trace(np.linalg.solve(H, K)))
    return -loglik / n + trace, trace


def fit_fixed_kappa(
    data: SurvivalDataset,
    spec: SplineSpec,
    kappa: float,
    init: ModelParams | None = None,
    options: NewtonOptions | None = None,
    model: PenalizedHazardModel | None = None,
) -> FitResult:
    """Maximize the penalized log-likelihood at a fixed smoothing parameter.

    Non-convergence is reported through ``converged=False`` rather than raised.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    check_design(data)
    opts = options or NewtonOptions()
    model = model or PenalizedHazardModel(data, spec)
    init = init or default_init(data, spec)
    p = data.p
    u = init.unconstrained
    iterations = 0
    for _ in range(opts.max_restarts + 1):
        u, obj, converged, its, grad_norm = _newton(model, kappa, u, opts)
        iterations += its
        # zeta_k = 0 is stationary in zeta even when theta_k wants to grow; re-seed those.
        theta = u[p:] ** 2
        g = model.gradient(u[:p], theta, kappa)[p:]
        A = np.diag(model.neg_hessian(u[:p], theta, kappa))[p:]
        stuck = (theta <= BOUNDARY_TOL * max(theta.max(), 1e-300)) & (
            g > opts.grad_tol * (1.0 + abs(obj))
        )
        if not (converged and stuck.any()):
            break
        u = u.copy()
        u[p:][stuck] = np.sqrt(g[stuck] / np.maximum(A[stuck], 1e-300))
    params = ModelParams(u[:p], u[p:])
    beta, theta = params.beta, params.theta
    H_pL = model.neg_hessian(beta, theta, kappa)
    H_L = model.neg_hessian(beta, theta, 0.0)
    scores = model.scores(beta, theta)
    pgrad = model.penalty_grad(theta)
    loglik = model.loglik(beta, theta)
    jac = np.concatenate([np.ones(p), 2.0 * params.zeta])
    g_L = scores.sum(axis=0)
    H_pL_zeta = zeta_hessian(H_pL, g_L - kappa * pgrad, jac, p)
    H_L_zeta = zeta_hessian(H_L, g_L, jac, p)
    try:
        lcv, trace = lcv_terms(H_pL_zeta, scores * jac, pgrad * jac, kappa, loglik)
    except (NumericalSingularityError, ValueError):
        lcv, trace = math.nan, math.nan
    return FitResult(
        params=params,
        kappa=float(kappa),
        loglik=loglik,
        pen_loglik=obj,
        H_pL=H_pL,
        H_L=H_L,
        scores=scores,
        penalty_grad=pgrad,
        jacobian=jac,
        H_pL_zeta=H_pL_zeta,
        H_L_zeta=H_L_zeta,
        lcv_a=lcv,
        edf=trace * data.n,
        converged=converged,
        iterations=iterations,
        grad_norm=grad_norm,
        boundary=bool(np.any(theta <= BOUNDARY_TOL * max(theta.max(), 1e-300))),
        spec=spec,
        n=data.n,
    )


def lcv_a(data: SurvivalDataset, fit: FitResult) -> float:
    """Approximate leave-one-out likelihood cross-validation score of a fit."""
    if not fit.converged:
        raise ValueError("LCV_a requires a converged fit")
    value, _ = lcv_terms(
        fit.H_pL_zeta, fit.scores_zeta, fit.penalty_grad_zeta, fit.kappa, fit.loglik
    )
    return value


def _usable(fit: FitResult) -> bool:
    return fit.converged and np.isfinite(fit.lcv_a)


def select_kappa(
    data: SurvivalDataset,
    spec: SplineSpec,
    bounds: tuple = KAPPA_BOUNDS,
    grid_points: int = GRID_POINTS,
    rel_width: float = 1e-2,
    options: NewtonOptions | None = None,
) -> KappaSearchResult:
    """Minimize LCV_a over a log grid, then refine by golden section.

    The grid is swept in increasing ``kappa`` with warm starts; the refinement
    brackets the grid minimum by its two neighbours.
    """
    lo, hi = bounds
    if not 0 < lo < hi:
        raise ValueError(f"need 0 < kappa_lo < kappa_hi, got {bounds}")
    check_design(data)
    model = PenalizedHazardModel(data, spec)
    fits: dict[float, FitResult] = {}
    diagnostics = []
    state = {"init": default_init(data, spec)}

    def run(kappa):
        if kappa in fits:
            return fits[kappa]
        try:
            fit = fit_fixed_kappa(data, spec, kappa, state["init"], options, model)
        except (ValueError, np.linalg.LinAlgError) as exc:
            diagnostics.append({"kappa": kappa, "error": str(exc)})
            return None
        fits[kappa] = fit
        diagnostics.append({"kappa": kappa, **fit.diagnostics()})
        if fit.converged:
            state["init"] = fit.params
        return fit

    def score(kappa):
        fit = run(kappa)
        return fit.lcv_a if fit is not None and _usable(fit) else math.inf

    grid = np.geomspace(lo, hi, grid_points)
    values = np.array([score(float(k)) for k in grid])
    if not np.any(np.isfinite(values)):
        raise SelectionFailure("no kappa on the grid gave a usable fit", diagnostics)
    i = int(np.argmin(values))  # first minimum, i.e. smallest kappa on ties

    a = math.log(grid[max(i - 1, 0)])
    b = math.log(grid[min(i + 1, grid_points - 1)])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = score(math.exp(c)), score(math.exp(d))
    while b - a > math.log1p(rel_width):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = score(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = score(math.exp(d))

    curve = sorted((k, f.lcv_a if _usable(f) else math.inf) for k, f in fits.items())
    best_k, best_v = min(curve, key=lambda kv: (kv[1], kv[0]))
    at_boundary = bool(best_k <= grid[0] or best_k >= grid[-1])
    if at_boundary:
        log.warning("LCV_a minimum at the edge of the kappa range (kappa=%g)", best_k)
    return KappaSearchResult(
        kappa_hat=best_k,
        lcv_curve=[(float(k), float(v)) for k, v in curve],
        fit=fits[best_k],
        at_boundary=at_boundary,
    )
