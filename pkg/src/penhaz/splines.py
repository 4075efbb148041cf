"""M-spline / I-spline bases on a clamped knot sequence and the roughness penalty.

The hazard is written as a nonnegative combination of M-splines (each a
B-spline rescaled to integrate to one), and the cumulative hazard as the same
combination of I-splines, their running integrals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline


class DegenerateDomainError(ValueError):
    """Raised when the observed times do not span a non-empty interval."""


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SplineSpec:
    """Clamped knot sequence, spline order and precomputed penalty matrix.

    Attributes:
        knots: full knot vector, boundary knots repeated ``order`` times.
        order: spline order (4 for cubic).
        omega: ``m x m`` matrix of integrated products of second derivatives.
        placement: how the distinct knots were placed ("equal" or "quantile").
    """

    knots: np.ndarray
    order: int = 4
    omega: np.ndarray = field(default=None, repr=False)
    placement: str = "equal"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        if self.omega is None:
            object.__setattr__(self, "omega", penalty_matrix(self))
        omega = np.asarray(self.omega, dtype=float)
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @property
    def m(self) -> int:
        return len(self.knots) - self.order

    @property
    def distinct_knots(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def lower(self) -> float:
        return float(self.knots[0])

    @property
    def upper(self) -> float:
        return float(self.knots[-1])

    @cached_property
    def _mspline(self) -> BSpline:
        # Coefficient matrix rescales each B-spline to unit integral: M_j = k B_j / (t_{j+k} - t_j).
        k = self.order
        widths = self.knots[k:] - self.knots[:-k]
        return BSpline(self.knots, np.diag(k / widths), k - 1, extrapolate=False)

    @cached_property
    def _ispline(self) -> BSpline:
        return self._mspline.antiderivative()

    @cached_property
    def _mspline_d2(self) -> BSpline:
        return self._mspline.derivative(2)

    def to_dict(self) -> dict:
        return {
            "knots": self.distinct_knots.tolist(),
            "order": self.order,
            "m": self.m,
            "placement": self.placement,
        }


def clamped_knots(distinct, order: int = 4) -> np.ndarray:
    distinct = np.asarray(distinct, dtype=float)
    return np.concatenate(
        [np.repeat(distinct[0], order - 1), distinct, np.repeat(distinct[-1], order - 1)]
    )


def make_knots(times, n_knots: int = 7, order: int = 4, placement: str = "equal") -> SplineSpec:
    """Build a spec with ``n_knots`` distinct knots covering the observed times.

    ``n_knots`` counts both boundary knots, so the basis has
    ``n_knots - 2 + order`` functions (9 for 7 cubic knots).
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DegenerateDomainError("no times given")
    if n_knots < 2:
        raise ValueError(f"n_knots must be >= 2, got {n_knots}")
    lo, hi = float(np.min(times)), float(np.max(times))
    if not hi > lo:
        raise DegenerateDomainError(f"times span a single value ({lo})")
    if placement == "equal":
        distinct = np.linspace(lo, hi, n_knots)
    elif placement == "quantile":
        distinct = np.quantile(times, np.linspace(0.0, 1.0, n_knots))
        distinct[0], distinct[-1] = lo, hi
        if np.any(np.diff(distinct) <= 0):
            raise DegenerateDomainError("quantile knots are not distinct")
    else:
        raise ValueError(f"unknown knot placement {placement!r}")
    return SplineSpec(clamped_knots(distinct, order), order=order, placement=placement)


def msplines_eval(spec: SplineSpec, t) -> np.ndarray:
    """M-spline values at ``t``.

    Returns shape ``(m,)`` for scalar ``t`` and ``(len(t), m)`` otherwise.
    Values outside the knot range are zero.
    """
    t_arr = np.asarray(t, dtype=float)
    out = spec._mspline(np.atleast_1d(t_arr))
    out = np.nan_to_num(out, nan=0.0)
    return out[0] if t_arr.ndim == 0 else out


def isplines_eval(spec: SplineSpec, t) -> np.ndarray:
    """I-spline values (running integrals of the M-splines) at ``t``."""
    t_arr = np.asarray(t, dtype=float)
    x = np.atleast_1d(t_arr)
    anti = spec._ispline
    inside = (x >= spec.lower) & (x <= spec.upper)
    out = np.zeros((x.size, spec.m))
    out[x > spec.upper] = 1.0
    if inside.any():
        vals = anti(x[inside])
        out[inside] = np.clip(vals, 0.0, 1.0)
    return out[0] if t_arr.ndim == 0 else out


def msplines_deriv2(spec: SplineSpec, t) -> np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    out = np.nan_to_num(spec._mspline_d2(np.atleast_1d(t_arr)), nan=0.0)
    return out[0] if t_arr.ndim == 0 else out


def penalty_matrix(spec: SplineSpec) -> np.ndarray:
    """Exact ``omega[k, r] = int M_k''(t) M_r''(t) dt`` for a cubic basis.

    Second derivatives are piecewise linear, so a 3-point Gauss rule on each
    knot interval integrates the products exactly.
    """
    if spec.order < 3:
        raise UnsupportedOrderError(
            f"second-derivative penalty needs order >= 3, got {spec.order}"
        )
    nodes, weights = np.polynomial.legendre.leggauss(3)
    distinct = np.unique(spec.knots)
    a, b = distinct[:-1], distinct[1:]
    half = 0.5 * (b - a)
    x = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * weights[None, :]
    d2 = msplines_deriv2(spec, x.ravel())
    omega = d2.T @ (w.ravel()[:, None] * d2)
    return 0.5 * (omega + omega.T)
