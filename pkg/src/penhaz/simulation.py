"""Synthetic survival data and replicated coverage experiments.

Every replica draws from its own generator seeded by ``(seed, replica)``, so
results do not depend on how replicas are scheduled across workers.
"""
from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context

import numpy as np

from penhaz.estimator import KAPPA_BOUNDS, GRID_POINTS, select_kappa
from penhaz.model import SurvivalDataset
from penhaz.splines import make_knots
from penhaz.variance import (
    Method,
    beta_intervals,
    estimate_variance,
    hazard_band,
    survival_band,
)

log = logging.getLogger(__name__)

FAILURE_WARN_FRACTION = 0.05
TARGETS = ("survival", "hazard")


@dataclass(frozen=True)
class WeibullTruth:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull shape and scale must be positive")

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.shape, self.scale
        return (a / b) * (t / b) ** (a - 1)

    def cumhaz(self, t):
        return (np.asarray(t, dtype=float) / self.scale) ** self.shape

    def survival(self, t):
        return np.exp(-self.cumhaz(t))


@dataclass(frozen=True)
class UniformRange:
    low: float
    high: float

    def draw(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)

    def __str__(self):
        return f"u({self.low:g},{self.high:g})"


def parse_covariates(text: str) -> list[UniformRange]:
    """Parse ``"u(0,1);u(0,3)"`` into uniform ranges."""
    out = []
    for part in filter(None, (s.strip() for s in text.split(";"))):
        m = re.fullmatch(r"u\(\s*([-+.\deE]+)\s*,\s*([-+.\deE]+)\s*\)", part)
        if not m:
            raise ValueError(f"cannot parse covariate distribution {part!r}")
        lo, hi = float(m.group(1)), float(m.group(2))
        if not hi > lo:
            raise ValueError(f"empty uniform range {part!r}")
        out.append(UniformRange(lo, hi))
    return out


@dataclass(frozen=True)
class Scenario:
    """One simulation design; the seed makes the whole experiment reproducible."""

    truth: WeibullTruth
    n: int
    censoring_prop: float = 0.2
    betas: tuple = ()
    covariate_dists: tuple = ()
    replicas: int = 1000
    seed: int = 0
    estimators: tuple = (Method.BAYES, Method.SANDWICH, Method.NP_SANDWICH)
    ci_level: float = 0.95
    n_gridpoints: int = 100
    n_knots: int = 7
    knot_placement: str = "equal"
    censoring_mode: str = "random"
    kappa_bounds: tuple = KAPPA_BOUNDS
    kappa_grid_points: int = GRID_POINTS
    paper_formula: bool = False

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.n_gridpoints < 2:
            raise ValueError("n_gridpoints must be >= 2")
        if not 0 <= self.censoring_prop < 1:
            raise ValueError("censoring proportion must be in [0, 1)")
        if len(self.betas) != len(self.covariate_dists):
            raise ValueError("one covariate distribution is needed per coefficient")
        object.__setattr__(self, "estimators", tuple(Method(e) for e in self.estimators))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "covariate_dists", tuple(self.covariate_dists))

    @property
    def p(self) -> int:
        return len(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = [e.value for e in self.estimators]
        d["covariate_dists"] = [str(c) for c in self.covariate_dists]
        d["kappa_bounds"] = list(self.kappa_bounds)
        d["betas"] = list(self.betas)
        return d


def replica_rng(seed: int, replica: int, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replica, *extra])))


def weibull_inverse_cdf(u, shape: float, scale: float):
    return scale * (-np.log(u)) ** (1.0 / shape)


def gen_weibull(n: int, truth: WeibullTruth, rng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return weibull_inverse_cdf(rng.uniform(size=n), truth.shape, truth.scale)


def apply_censoring(times, prop: float, rng, mode: str = "random"):
    """Censor exactly ``floor(prop * n)`` subjects.

    ``mode="random"`` picks the subjects uniformly and replaces their time by
    ``V * T`` with ``V ~ U(0, 1)``; ``mode="administrative"`` censors the
    largest times at the largest remaining event time.
    """
    if not 0 <= prop < 1:
        raise ValueError("censoring proportion must be in [0, 1)")
    times = np.array(times, dtype=float)
    n = times.size
    k = int(math.floor(prop * n))
    event = np.ones(n, dtype=bool)
    if k == 0:
        return times, event
    if mode == "random":
        idx = rng.choice(n, size=k, replace=False)
        times[idx] = times[idx] * rng.uniform(size=k)
    elif mode == "administrative":
        order = np.argsort(times, kind="stable")
        idx = order[n - k :]
        times[idx] = times[order[n - k - 1]] if n > k else times[idx]
    else:
        raise ValueError(f"unknown censoring mode {mode!r}")
    event[idx] = False
    return times, event


def gen_ph(n, shape, scale, betas, covariate_dists, rng, paper_formula=False) -> SurvivalDataset:
    """Proportional-hazards sample with a Weibull baseline by inverting ``S(t | X)``.

    ``paper_formula=True`` multiplies ``-log U`` by ``exp(X beta)`` instead of
    dividing, which corresponds to coefficients of the opposite sign.
    """
    betas = np.asarray(betas, dtype=float)
    if betas.size < 1:
        raise ValueError("gen_ph needs at least one covariate")
    X = np.column_stack([d.draw(rng, n) for d in covariate_dists])
    risk = np.exp(X @ betas)
    u = rng.uniform(size=n)
    base = -np.log(u) * risk if paper_formula else -np.log(u) / risk
    T = scale * base ** (1.0 / shape)
    return SurvivalDataset(T, np.ones(n, dtype=bool), X)


def true_curves(truth: WeibullTruth, times):
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    return truth.hazard(times), truth.survival(times)


def _simulate_dataset(scenario: Scenario, rng) -> SurvivalDataset:
    if scenario.p:
        raw = gen_ph(
            scenario.n,
            scenario.truth.shape,
            scenario.truth.scale,
            scenario.betas,
            scenario.covariate_dists,
            rng,
            scenario.paper_formula,
        )
        T, X = raw.time, raw.covariates
    else:
        T, X = gen_weibull(scenario.n, scenario.truth, rng), None
    times, event = apply_censoring(T, scenario.censoring_prop, rng, scenario.censoring_mode)
    return SurvivalDataset(times, event, X)


def fit_scenario(data: SurvivalDataset, scenario: Scenario):
    spec = make_knots(data.time, scenario.n_knots, placement=scenario.knot_placement)
    sel = select_kappa(data, spec, scenario.kappa_bounds, scenario.kappa_grid_points)
    return spec, sel


def penalized_bands(data: SurvivalDataset, scenario: Scenario, grid):
    """Default band maker: select kappa, fit, and build every requested band.

    Returns ``(bands, info)`` where ``bands[method][target]`` is a CurveBand or
    ``None`` when that variance estimate could not be formed.
    """
    spec, sel = fit_scenario(data, scenario)
    fit = sel.fit
    if not fit.converged:
        raise RuntimeError("fit did not converge")
    bands = {}
    for method in scenario.estimators:
        try:
            var = estimate_variance(fit, method)
            bands[method] = {
                "survival": survival_band(fit, var, spec, grid, scenario.ci_level),
                "hazard": hazard_band(fit, var, spec, grid, scenario.ci_level),
            }
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            bands[method] = None
    return bands, {"kappa": sel.kappa_hat, "edf": fit.edf, "boundary": fit.boundary}


def _coverage_replica(args):
    scenario, r, band_maker = args
    rng = replica_rng(scenario.seed, r)
    data = _simulate_dataset(scenario, rng)
    ev_times = data.time[data.event]
    grid = np.linspace(ev_times.min(), ev_times.max(), scenario.n_gridpoints)
    truth = dict(zip(("hazard", "survival"), true_curves(scenario.truth, grid)))
    try:
        bands, info = (band_maker or penalized_bands)(data, scenario, grid)
    except Exception as exc:  # replica-level failure is counted, not fatal
        return {"replica": r, "failed": True, "error": f"{type(exc).__name__}: {exc}"}
    out = {"replica": r, "failed": False, "info": info, "stats": {}}
    for method in scenario.estimators:
        per_target = None
        if bands.get(method) is not None:
            per_target = {}
            for target in TARGETS:
                band = bands[method][target]
                tv = truth[target]
                per_target[target] = {
                    "coverage": float(np.mean(band.covers(tv))),
                    "bias": float(np.mean(band.estimate - tv)),
                    "width": float(np.mean(band.upper - band.lower)),
                }
        out["stats"][method.value] = per_target
    return out


def _run(fn, jobs, workers):
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with get_context("fork").Pool(workers) as pool:
        return pool.map(fn, jobs, chunksize=max(1, len(jobs) // (8 * workers)))


@dataclass
class CoverageReport:
    """Aggregated replica results; ``rows`` mirrors the flat table layout."""

    kind: str
    scenario: dict
    rows: list
    replicas: int
    failures: int
    failure_details: list = field(default_factory=list)
    warning: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _failure_warning(failures, total):
    if total and failures / total > FAILURE_WARN_FRACTION:
        msg = f"{failures} of {total} replicas failed (> {FAILURE_WARN_FRACTION:.0%})"
        log.warning(msg)
        return msg
    return None


def coverage_experiment(scenario: Scenario, workers: int | None = 1, band_maker=None) -> CoverageReport:
    """Pointwise coverage of the survival and hazard bands across replicas.

    ``band_maker(data, scenario, grid) -> (bands, info)`` replaces the
    penalized fit, which lets the counting machinery be checked against oracle
    bands.
    """
    jobs = [(scenario, r, band_maker) for r in range(scenario.replicas)]
    results = _run(_coverage_replica, jobs, workers)
    ok = [res for res in results if not res["failed"]]
    failures = len(results) - len(ok)
    rows = []
    for target in TARGETS:
        for method in scenario.estimators:
            stats = [res["stats"][method.value][target] for res in ok if res["stats"][method.value]]
            row = {
                "target": target,
                "estimator": method.value,
                "n": scenario.n,
                "replicas_used": len(stats),
                "estimator_failures": len(ok) - len(stats),
            }
            for key in ("coverage", "bias", "width"):
                vals = np.array([s[key] for s in stats])
                row[f"mean_{key}"] = float(vals.mean()) if vals.size else math.nan
            cov = np.array([s["coverage"] for s in stats])
            row["coverage_mc_se"] = float(cov.std(ddof=1) / np.sqrt(cov.size)) if cov.size > 1 else math.nan
            rows.append(row)
    kappas = np.array([res["info"].get("kappa", math.nan) for res in ok], dtype=float)
    extra = {}
    if kappas.size and np.all(np.isfinite(kappas)):
        extra = {
            "kappa_geomean": float(np.exp(np.mean(np.log(kappas)))),
            "kappa_median": float(np.median(kappas)),
        }
    return CoverageReport(
        kind="coverage",
        scenario=scenario.to_dict(),
        rows=rows,
        replicas=scenario.replicas,
        failures=failures,
        failure_details=[{"replica": r["replica"], "error": r["error"]} for r in results if r["failed"]],
        warning=_failure_warning(failures, len(results)),
        extra=extra,
    )


def _ph_replica(args):
    scenario, r = args
    rng = replica_rng(scenario.seed, r)
    data = _simulate_dataset(scenario, rng)
    try:
        spec, sel = fit_scenario(data, scenario)
        fit = sel.fit
        if not fit.converged:
            raise RuntimeError("fit did not converge")
        out = {"replica": r, "failed": False, "kappa": sel.kappa_hat, "methods": {}}
        for method in scenario.estimators:
            try:
                ci = beta_intervals(fit, estimate_variance(fit, method), scenario.ci_level)
            except (ArithmeticError, ValueError, np.linalg.LinAlgError):
                out["methods"][method.value] = None
                continue
            out["methods"][method.value] = [
                (c.estimate, c.sd, c.width, bool(c.lower <= b <= c.upper))
                for c, b in zip(ci, scenario.betas)
            ]
        return out
    except Exception as exc:
        return {"replica": r, "failed": True, "error": f"{type(exc).__name__}: {exc}"}


def ph_experiment(scenario: Scenario, workers: int | None = 1) -> CoverageReport:
    """Bias, standard errors and interval coverage for the regression coefficients."""
    if scenario.p < 1:
        raise ValueError("ph_experiment needs at least one covariate")
    results = _run(_ph_replica, [(scenario, r) for r in range(scenario.replicas)], workers)
    ok = [res for res in results if not res["failed"]]
    failures = len(results) - len(ok)
    rows = []
    for method in scenario.estimators:
        per = [res["methods"][method.value] for res in ok if res["methods"][method.value] is not None]
        for j, beta in enumerate(scenario.betas):
            vals = np.array([rec[j][:3] for rec in per], dtype=float).reshape(-1, 3)
            cover = np.array([rec[j][3] for rec in per], dtype=float)
            used = cover.size
            rows.append(
                {
                    "coefficient": f"beta{j + 1}",
                    "estimator": method.value,
                    "true": beta,
                    "n": scenario.n,
                    "replicas_used": used,
                    "mean_estimate": float(vals[:, 0].mean()) if used else math.nan,
                    "empirical_sd": float(vals[:, 0].std(ddof=1)) if used > 1 else math.nan,
                    "mean_sd": float(vals[:, 1].mean()) if used else math.nan,
                    "mean_width": float(vals[:, 2].mean()) if used else math.nan,
                    "coverage": float(cover.mean()) if used else math.nan,
                }
            )
    return CoverageReport(
        kind="ph",
        scenario=scenario.to_dict(),
        rows=rows,
        replicas=scenario.replicas,
        failures=failures,
        failure_details=[{"replica": r["replica"], "error": r["error"]} for r in results if r["failed"]],
        warning=_failure_warning(failures, len(results)),
    )


def _kappa_replica(args):
    scenario, r = args
    rng = replica_rng(scenario.seed, r, scenario.n)
    data = _simulate_dataset(scenario, rng)
    try:
        _, sel = fit_scenario(data, scenario)
        return sel.kappa_hat
    except Exception:
        return math.nan


def kappa_sequence_experiment(
    sizes,
    truth: WeibullTruth,
    base_seed: int,
    replicas: int = 10,
    workers: int | None = 1,
    **scenario_kw,
) -> CoverageReport:
    """Selected smoothing parameter as a function of sample size.

    ``kappa_n`` is the geometric mean over replicas (log scale is where the
    criterion is searched); the arithmetic mean is reported alongside.
    """
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    rows = []
    failures = 0
    for n in sizes:
        scen = Scenario(truth=truth, n=n, replicas=replicas, seed=base_seed, **scenario_kw)
        kappas = np.array(_run(_kappa_replica, [(scen, r) for r in range(replicas)], workers))
        good = kappas[np.isfinite(kappas)]
        failures += kappas.size - good.size
        k = float(np.exp(np.mean(np.log(good)))) if good.size else math.nan
        rows.append(
            {
                "n": n,
                "kappa": k,
                "kappa_arith_mean": float(good.mean()) if good.size else math.nan,
                "kappa_sqrt_n": k / math.sqrt(n),
                "lambda": k / n,
                "replicas_used": int(good.size),
            }
        )
    scenario = Scenario(truth=truth, n=sizes[0], replicas=replicas, seed=base_seed, **scenario_kw).to_dict()
    scenario["sizes"] = sizes
    total = replicas * len(sizes)
    return CoverageReport(
        kind="kappa_sequence",
        scenario=scenario,
        rows=rows,
        replicas=replicas,
        failures=failures,
        warning=_failure_warning(failures, total),
        extra={"lambda_loglog_slope": decay_slope(rows)},
    )


def decay_slope(rows) -> float:
    """Least-squares slope of ``log lambda_n`` against ``log n``."""
    n = np.array([r["n"] for r in rows], dtype=float)
    lam = np.array([r["lambda"] for r in rows], dtype=float)
    keep = np.isfinite(lam) & (lam > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(n[keep]), np.log(lam[keep]), 1)[0])
