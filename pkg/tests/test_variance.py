import numpy as np
import pytest

from conftest import weibull_sample
from penhaz.estimator import fit_fixed_kappa, select_kappa
from penhaz.model import SurvivalDataset
from penhaz.splines import SplineSpec, clamped_knots, isplines_eval, make_knots
from penhaz.variance import (
    IndefiniteHessianError,
    Method,
    NoCovariatesError,
    OutOfRangeError,
    VarianceEstimate,
    beta_intervals,
    estimate_variance,
    hazard_band,
    survival_band,
    survival_gradient,
    var_bayes,
    var_sandwich,
    z_value,
)


@pytest.fixture(scope="module")
def interior_fit():
    # a gently increasing hazard keeps every coefficient off zero at kappa = 0
    data = weibull_sample(400, 0, shape=1.5, scale=1.0)
    spec = make_knots(data.time, 3)
    fit = fit_fixed_kappa(data, spec, 0.0)
    assert not fit.boundary
    return data, spec, fit


@pytest.fixture(scope="module")
def selected(ph200):
    data, spec = ph200
    return data, spec, select_kappa(data, spec).fit


def is_psd(V):
    eig = np.linalg.eigvalsh(V)
    return np.array_equal(V, V.T) and eig[0] >= -1e-10 * max(abs(eig[-1]), 1e-300)


def test_z_value():
    assert z_value(0.95) == pytest.approx(1.959964, abs=5e-7)
    with pytest.raises(ValueError):
        z_value(1.0)


def test_kappa_zero_sandwiches_coincide(interior_fit):
    _, _, fit = interior_fit
    a = var_sandwich(fit, penalized=True).matrix
    b = var_sandwich(fit, penalized=False).matrix
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


def test_kappa_zero_bayes_is_inverse_information(interior_fit):
    _, _, fit = interior_fit
    V = var_bayes(fit).matrix
    ref = np.linalg.inv(fit.H_L)
    np.testing.assert_allclose(V, ref, rtol=1e-6, atol=1e-10 * np.abs(ref).max())


def test_bayes_times_hessian_is_identity(interior_fit):
    _, _, fit = interior_fit
    V = var_bayes(fit).matrix
    assert np.max(np.abs(V @ fit.H_pL - np.eye(V.shape[0]))) < 1e-8


def test_all_estimators_psd(selected, interior_fit):
    for fit in (selected[2], interior_fit[2]):
        for m in Method:
            V = estimate_variance(fit, m)
            assert V.method is m
            assert is_psd(V.matrix)


def test_meat_is_psd(selected):
    fit = selected[2]
    U = fit.scores + fit.kappa * fit.penalty_grad
    assert is_psd(U.T @ U)


def test_bayes_shrinks_with_kappa(interior_fit):
    fit = interior_fit[2]
    p = fit.p
    omega = np.zeros_like(fit.H_L)
    omega[p:, p:] = 2 * fit.spec.omega
    prev = None
    for kappa in (0.0, 1.0, 10.0, 100.0, 1e3):
        diag = np.diag(np.linalg.inv(fit.H_L + kappa * omega))[p:]
        if prev is not None:
            assert np.all(diag <= prev * (1 + 1e-10))
        prev = diag


def test_exponential_toy_information_equality():
    rng = np.random.default_rng(0)
    t = rng.exponential(10.0, size=2000)
    spec = SplineSpec(clamped_knots([0.0, t.max()], 1), order=1, omega=np.zeros((1, 1)))
    fit = fit_fixed_kappa(SurvivalDataset(t, np.ones(t.size, bool)), spec, 0.0)
    vb = var_bayes(fit).matrix[0, 0]
    vs = var_sandwich(fit, penalized=True).matrix[0, 0]
    assert abs(vs / vb - 1) < 0.15


def test_indefinite_hessian_rejected(interior_fit):
    _, _, fit = interior_fit
    from dataclasses import replace

    bad = replace(fit, H_pL_zeta=-np.eye(fit.H_pL_zeta.shape[0]))
    with pytest.raises(IndefiniteHessianError):
        var_bayes(bad)


class TestBands:
    def test_zero_variance_collapses(self, selected):
        data, spec, fit = selected
        zero = VarianceEstimate(Method.BAYES, np.zeros_like(fit.H_pL), 1.0)
        grid = np.linspace(spec.lower, spec.upper, 20)
        for band in (hazard_band(fit, zero, spec, grid), survival_band(fit, zero, spec, grid)):
            assert np.array_equal(band.lower, band.estimate) or np.allclose(band.lower, np.clip(band.estimate, 0, 1))
            assert np.array_equal(band.upper, band.lower)

    def test_half_width_over_sd_is_z(self, selected):
        data, spec, fit = selected
        var = var_bayes(fit)
        grid = np.linspace(spec.lower, spec.upper, 50)
        band = hazard_band(fit, var, spec, grid, 0.95)
        ok = (band.sd > 0) & (band.estimate - band.lower < band.upper - band.estimate + 1e-15)
        ok &= band.lower > 0
        np.testing.assert_allclose((band.upper - band.estimate)[ok] / band.sd[ok], 1.959964, atol=1e-6)

    def test_width_scales_with_z(self, selected):
        data, spec, fit = selected
        var = var_bayes(fit)
        grid = np.linspace(spec.lower, spec.upper, 50)
        for maker in (hazard_band, survival_band):
            b95, b99 = maker(fit, var, spec, grid, 0.95), maker(fit, var, spec, grid, 0.99)
            np.testing.assert_array_equal(b95.sd, b99.sd)
            ratio = z_value(0.99) / z_value(0.95)
            np.testing.assert_allclose(z_value(0.99) * b99.sd, ratio * z_value(0.95) * b95.sd, rtol=1e-15)

    def test_hazard_truncation_flag(self, selected):
        data, spec, fit = selected
        huge = VarianceEstimate(Method.BAYES, np.eye(fit.H_pL.shape[0]) * 1e6, 1.0)
        grid = np.linspace(spec.lower, spec.upper, 20)
        band = hazard_band(fit, huge, spec, grid)
        assert band.truncated and np.all(band.lower >= 0)
        sband = survival_band(fit, huge, spec, grid)
        assert np.all((sband.lower >= 0) & (sband.upper <= 1))

    def test_survival_at_lower_bound(self, selected):
        data, spec, fit = selected
        band = survival_band(fit, var_bayes(fit), spec, [spec.lower])
        assert band.estimate[0] == 1.0 and band.sd[0] == 0.0

    def test_survival_gradient_finite_differences(self, selected):
        data, spec, fit = selected
        I = isplines_eval(spec, np.array([spec.lower + 0.3 * (spec.upper - spec.lower)]))
        theta = fit.theta
        G = survival_gradient(theta, I)[0]
        h = 1e-7
        fd = np.array([
            (np.exp(-I @ (theta + h * e)) - np.exp(-I @ (theta - h * e)))[0] / (2 * h)
            for e in np.eye(theta.size)
        ])
        np.testing.assert_allclose(G, fd, rtol=1e-6, atol=1e-9)

    def test_survival_variance_via_cumulative_hazard(self, selected):
        data, spec, fit = selected
        var = var_sandwich(fit)
        grid = np.linspace(spec.lower, spec.upper, 30)
        band = survival_band(fit, var, spec, grid)
        I = isplines_eval(spec, grid)
        V = var.theta_block(fit.p)
        var_H = np.einsum("ij,jk,ik->i", I, V, I)
        S = np.exp(-I @ fit.theta)
        np.testing.assert_allclose(band.sd**2, S**2 * var_H, rtol=1e-10, atol=1e-300)

    def test_out_of_range(self, selected):
        data, spec, fit = selected
        with pytest.raises(OutOfRangeError):
            hazard_band(fit, var_bayes(fit), spec, [spec.upper + 1.0])


class TestBetaIntervals:
    def test_width_is_two_z_sd(self, selected):
        fit = selected[2]
        for ci in beta_intervals(fit, var_bayes(fit), 0.9):
            assert ci.width == pytest.approx(2 * z_value(0.9) * ci.sd, rel=1e-14)
            assert ci.lower < ci.estimate < ci.upper

    def test_requires_covariates(self, interior_fit):
        _, _, fit = interior_fit
        with pytest.raises(NoCovariatesError):
            beta_intervals(fit, var_bayes(fit))
