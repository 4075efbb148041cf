import math

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import ph_sample, weibull_sample
from penhaz.estimator import (
    NumericalSingularityError,
    SingularDesignError,
    fit_fixed_kappa,
    lcv_a,
    lcv_terms,
    select_kappa,
)
from penhaz.model import ModelParams, PenalizedHazardModel, SurvivalDataset, pl_gradient
from penhaz.splines import make_knots


@pytest.fixture(scope="module")
def w500():
    data = weibull_sample(500, 21)
    return data, make_knots(data.time, 7)


@pytest.fixture(scope="module")
def fit500(w500):
    data, spec = w500
    return fit_fixed_kappa(data, spec, 0.0)


def exact_loo(data, spec, kappa, init):
    full = PenalizedHazardModel(data, spec)
    total = 0.0
    for i in range(data.n):
        sub = data.subset(np.delete(np.arange(data.n), i))
        f = fit_fixed_kappa(sub, spec, kappa, init=init)
        total += full.loglik_terms(f.beta, f.theta)[i]
    return -total / data.n


class TestFixedKappa:
    def test_local_maximality(self, w500, fit500):
        data, spec = w500
        model = PenalizedHazardModel(data, spec)
        assert fit500.converged
        rng = np.random.default_rng(0)
        zeta = fit500.params.zeta
        for _ in range(1000):
            z = zeta + rng.normal(scale=1e-3 * np.abs(zeta).max(), size=zeta.size)
            assert model.loglik([], z**2) <= fit500.loglik + 1e-9 * abs(fit500.loglik)

    def test_derivative_free_oracle(self):
        data = weibull_sample(100, 4)
        spec = make_knots(data.time, 7)
        fit = fit_fixed_kappa(data, spec, 0.0)
        model = PenalizedHazardModel(data, spec)

        def negL(z):
            v = model.loglik([], z**2)
            return -v if np.isfinite(v) else 1e300

        best = math.inf
        z = np.full(spec.m, math.sqrt(0.8 / spec.m))
        for _ in range(6):
            res = minimize(negL, z, method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxfev": 200000})
            z, best = res.x, min(best, res.fun)
            res = minimize(negL, z, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-14, "maxfev": 200000, "adaptive": True})
            z, best = res.x, min(best, res.fun)
        assert abs(fit.pen_loglik - (-best)) <= 1e-4

    def test_large_kappa_removes_curvature(self, w500, fit500):
        data, spec = w500
        stiff = fit_fixed_kappa(data, spec, 1e12)
        assert stiff.converged
        assert stiff.penalty <= 1e-6 * fit500.penalty

    def test_convergence_invariants(self, ph200):
        data, spec = ph200
        fit = fit_fixed_kappa(data, spec, 50.0)
        assert fit.converged
        g_zeta = (fit.scores_zeta.sum(axis=0) - fit.kappa * fit.penalty_grad_zeta)
        assert np.max(np.abs(g_zeta)) <= 1e-6 * (1 + abs(fit.pen_loglik))
        assert np.array_equal(fit.H_pL, fit.H_pL.T)
        # no coefficient is held at zero while the likelihood wants it larger
        g_theta = pl_gradient(data, fit.params, spec, fit.kappa)[data.p:]
        assert np.all(g_theta[fit.theta < 1e-10] <= 1e-6 * (1 + abs(fit.pen_loglik)))
        interior = np.concatenate([np.ones(data.p, bool), fit.theta > 1e-8])
        assert np.all(np.linalg.eigvalsh(fit.H_pL_zeta) > 0)
        assert np.max(np.abs(pl_gradient(data, fit.params, spec, fit.kappa)[interior])) < 1e-4

    def test_warm_and_cold_starts_agree(self, w500):
        data, spec = w500
        cold = fit_fixed_kappa(data, spec, 300.0)
        warm = fit_fixed_kappa(data, spec, 300.0, init=fit_fixed_kappa(data, spec, 30.0).params)
        assert warm.pen_loglik == pytest.approx(cold.pen_loglik, rel=1e-7)

    def test_deterministic(self, ph200):
        data, spec = ph200
        a = fit_fixed_kappa(data, spec, 12.0)
        b = fit_fixed_kappa(data, spec, 12.0)
        assert np.array_equal(a.params.unconstrained, b.params.unconstrained)
        assert np.array_equal(a.H_pL, b.H_pL) and a.lcv_a == b.lcv_a

    def test_time_rescaling(self):
        data = weibull_sample(80, 8)
        c = 3.7
        spec, spec_c = make_knots(data.time, 7), make_knots(data.time * c, 7)
        scaled = SurvivalDataset(data.time * c, data.event)
        # Omega scales like c**-5, so kappa * c**5 keeps the same penalized problem
        f = fit_fixed_kappa(data, spec, 20.0)
        fc = fit_fixed_kappa(scaled, spec_c, 20.0 * c**5)
        shift = data.n_events * math.log(c)
        assert fc.loglik == pytest.approx(f.loglik - shift, abs=1e-6)
        assert fc.pen_loglik == pytest.approx(f.pen_loglik - shift, abs=1e-6)

    def test_rank_deficient_design(self):
        d = weibull_sample(40, 1)
        x = np.random.default_rng(0).uniform(size=40)
        data = SurvivalDataset(d.time, d.event, np.column_stack([x, 2 * x]))
        with pytest.raises(SingularDesignError):
            fit_fixed_kappa(data, make_knots(data.time, 5), 1.0)

    def test_negative_kappa(self, weibull100):
        data, spec = weibull100
        with pytest.raises(ValueError):
            fit_fixed_kappa(data, spec, -1.0)

    def test_covariate_recovery(self):
        data = ph_sample(1500, 2, betas=(1.0,))
        spec = make_knots(data.time, 7)
        fit = select_kappa(data, spec).fit
        assert fit.beta[0] == pytest.approx(1.0, abs=0.3)


class TestLCV:
    def test_matches_exact_leave_one_out(self):
        data = weibull_sample(30, 0)
        spec = make_knots(data.time, 7)
        sel = select_kappa(data, spec)
        loo = exact_loo(data, spec, sel.kappa_hat, sel.fit.params)
        assert abs(sel.fit.lcv_a - loo) <= 0.05 * abs(loo)

    def test_leave_one_out_across_samples(self):
        # typical agreement; a lone early event can make one refit far worse
        errs = []
        for seed in range(8):
            data = weibull_sample(30, seed)
            spec = make_knots(data.time, 7)
            sel = select_kappa(data, spec)
            loo = exact_loo(data, spec, sel.kappa_hat, sel.fit.params)
            errs.append(abs(sel.fit.lcv_a / loo - 1))
        assert np.median(errs) < 0.05

    def test_kappa_zero_reduction(self, weibull100):
        data, spec = weibull100
        fit = fit_fixed_kappa(data, spec, 0.0)
        n = data.n
        V = fit.scores_zeta
        H = fit.H_L_zeta
        expected = -fit.loglik / n + np.trace(np.linalg.solve(H / n, V.T @ V)) / (n * (n - 1))
        assert lcv_a(data, fit) == pytest.approx(expected, rel=1e-10)

    def test_trace_positive(self, weibull100, ph200):
        for data, spec in (weibull100, ph200):
            for kappa in (0.1, 10.0, 1e3, 1e5):
                fit = fit_fixed_kappa(data, spec, kappa)
                assert fit.edf > 0

    def test_singular_hessian_reported(self):
        with pytest.raises(NumericalSingularityError) as info:
            lcv_terms(np.zeros((2, 2)), np.ones((5, 2)), np.zeros(2), 0.0, -1.0)
        assert info.value.condition > 1e15


class TestSelection:
    def test_minimum_on_curve(self, weibull100):
        data, spec = weibull100
        sel = select_kappa(data, spec)
        values = [v for _, v in sel.lcv_curve]
        assert sel.fit.lcv_a == min(values)
        assert (sel.kappa_hat, sel.fit.lcv_a) in sel.lcv_curve
        assert len(sel.lcv_curve) >= 30
        ks = [k for k, _ in sel.lcv_curve]
        assert ks == sorted(ks)

    def test_grid_refinement_stability(self, weibull100):
        data, spec = weibull100
        a = select_kappa(data, spec, grid_points=30)
        b = select_kappa(data, spec, grid_points=59)
        assert abs(math.log(b.kappa_hat / a.kappa_hat)) < math.log1p(1e-2)
        assert abs(b.fit.lcv_a - a.fit.lcv_a) < 1e-4

    def test_boundary_warning(self, weibull100, caplog):
        data, spec = weibull100
        sel = select_kappa(data, spec, bounds=(1e-2, 1e-1), grid_points=5)
        assert sel.at_boundary
        assert "edge" in caplog.text

    def test_invalid_bounds(self, weibull100):
        data, spec = weibull100
        with pytest.raises(ValueError):
            select_kappa(data, spec, bounds=(0.0, 1.0))
