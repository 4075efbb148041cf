"""Proportional-hazards log-likelihood with an M-spline baseline hazard.

Subject ``i`` contributes

    L_i = -exp(X_i beta) * sum_k theta_k I_k(T_i) + delta_i * (log sum_k theta_k M_k(T_i) + X_i beta)

and the roughness penalty is ``J(theta) = theta' Omega theta``. All derivatives
are with respect to ``xi = (beta, theta)``; the optimizer works in
``zeta`` with ``theta = zeta**2`` and converts through the chain rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from penhaz.splines import SplineSpec, isplines_eval, msplines_eval


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored survival sample.

    Attributes:
        time: observed times ``min(T_i, C_i)``, all positive.
        event: True where the event was observed.
        covariates: ``(n, p)`` design matrix, ``p`` may be 0.
    """

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray = None

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).astype(bool).ravel()
        if time.size < 1:
            raise ValueError("dataset must contain at least one subject")
        if event.shape != time.shape:
            raise ValueError("time and event lengths differ")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise ValueError("all times must be positive and finite")
        cov = self.covariates
        if cov is None:
            cov = np.zeros((time.size, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != time.size:
            raise ValueError("covariate rows do not match number of subjects")
        for name, arr in (("time", time), ("event", event), ("covariates", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.atleast_1d(idx)
        return SurvivalDataset(self.time[idx], self.event[idx], self.covariates[idx])


@dataclass(frozen=True, eq=False)
class ModelParams:
    beta: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float).ravel())

    @classmethod
    def from_theta(cls, beta, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < 0):
            raise ValueError("spline coefficients must be nonnegative")
        return cls(beta, np.sqrt(theta))

    @classmethod
    def from_vector(cls, xi, p: int) -> "ModelParams":
        """Split a packed ``(beta, theta)`` vector."""
        xi = np.asarray(xi, dtype=float)
        return cls.from_theta(xi[:p], xi[p:])

    @property
    def theta(self) -> np.ndarray:
        return self.zeta**2

    @property
    def xi(self) -> np.ndarray:
        return np.concatenate([self.beta, self.theta])

    @property
    def unconstrained(self) -> np.ndarray:
        return np.concatenate([self.beta, self.zeta])


class PenalizedHazardModel:
    """Dataset and basis bound together, with basis values cached at the data times.

    Every derivative here is analytic; finite differences only appear in tests.
    """

    def __init__(self, data: SurvivalDataset, spec: SplineSpec):
        self.data = data
        self.spec = spec
        self.M = msplines_eval(spec, data.time)
        self.I = isplines_eval(spec, data.time)
        self.X = data.covariates
        self.delta = data.event.astype(float)
        self.omega = spec.omega

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def p(self) -> int:
        return self.data.p

    @property
    def m(self) -> int:
        return self.spec.m

    def _parts(self, beta, theta):
        eta = self.X @ beta
        risk = np.exp(eta)
        cumhaz = self.I @ theta
        hazard = self.M @ theta
        return eta, risk, cumhaz, hazard

    def loglik_terms(self, beta, theta) -> np.ndarray:
        """Per-subject contributions; ``-inf`` where an event has zero hazard."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            eta, risk, cumhaz, hazard = self._parts(beta, theta)
            out = -risk * cumhaz
            ev = self.delta > 0
            out[ev] += np.log(hazard[ev]) + eta[ev]
        out[ev & ~(hazard > 0)] = -np.inf
        # trial points far out in beta can overflow; treat them like zero hazard
        out[~np.isfinite(out)] = -np.inf
        return out

    def loglik(self, beta, theta) -> float:
        return float(np.sum(self.loglik_terms(beta, theta)))

    def penalty(self, theta) -> float:
        return float(theta @ self.omega @ theta)

    def penalty_grad(self, theta) -> np.ndarray:
        """Gradient of J with respect to the full ``(beta, theta)`` vector."""
        return np.concatenate([np.zeros(self.p), 2.0 * self.omega @ theta])

    def pen_loglik(self, beta, theta, kappa: float) -> float:
        return self.loglik(beta, theta) - kappa * self.penalty(theta)

    def scores(self, beta, theta) -> np.ndarray:
        """``(n, p + m)`` matrix of individual scores ``dL_i / dxi``."""
        _, risk, cumhaz, hazard = self._parts(beta, theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            ev_scale = np.where(self.delta > 0, self.delta / hazard, 0.0)
        s_beta = self.X * (self.delta - risk * cumhaz)[:, None]
        s_theta = -risk[:, None] * self.I + ev_scale[:, None] * self.M
        return np.hstack([s_beta, s_theta])

    def gradient(self, beta, theta, kappa: float = 0.0) -> np.ndarray:
        _, risk, cumhaz, hazard = self._parts(beta, theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            ev_scale = np.where(self.delta > 0, self.delta / hazard, 0.0)
        g = np.concatenate(
            [self.X.T @ (self.delta - risk * cumhaz), ev_scale @ self.M - risk @ self.I]
        )
        if kappa:
            g = g - kappa * self.penalty_grad(theta)
        return g

    def neg_hessian(self, beta, theta, kappa: float = 0.0) -> np.ndarray:
        """``-d2 L / dxi2 + kappa * d2 J / dxi2`` (so ``kappa=0`` gives the observed information)."""
        p, m = self.p, self.m
        _, risk, cumhaz, hazard = self._parts(beta, theta)
        H = np.empty((p + m, p + m))
        wx = self.X * (risk * cumhaz)[:, None]
        H[:p, :p] = self.X.T @ wx
        cross = self.X.T @ (risk[:, None] * self.I)
        H[:p, p:] = cross
        H[p:, :p] = cross.T
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(self.delta > 0, self.delta / hazard**2, 0.0)
        H[p:, p:] = self.M.T @ (w[:, None] * self.M)
        if kappa:
            H[p:, p:] += 2.0 * kappa * self.omega
        return 0.5 * (H + H.T)


def _as_model(data, spec) -> PenalizedHazardModel:
    return PenalizedHazardModel(data, spec)


def log_likelihood(data: SurvivalDataset, params: ModelParams, spec: SplineSpec) -> float:
    return _as_model(data, spec).loglik(params.beta, params.theta)


def penalty_value(params: ModelParams, spec: SplineSpec) -> float:
    theta = params.theta
    return float(theta @ spec.omega @ theta)


def penalized_loglik(data, params, spec, kappa: float) -> float:
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    return log_likelihood(data, params, spec) - kappa * penalty_value(params, spec)


def score_individual(data, i: int, params, spec) -> np.ndarray:
    if not 0 <= i < data.n:
        raise IndexError(f"subject index {i} out of range for n={data.n}")
    return _as_model(data.subset(i), spec).scores(params.beta, params.theta)[0]


def pl_gradient(data, params, spec, kappa: float) -> np.ndarray:
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    return _as_model(data, spec).gradient(params.beta, params.theta, kappa)


def pl_hessian(data, params, spec, kappa: float) -> np.ndarray:
    """Penalized Hessian ``H_pL`` (Hessian of minus the penalized log-likelihood)."""
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    return _as_model(data, spec).neg_hessian(params.beta, params.theta, kappa)
