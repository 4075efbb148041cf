"""Command-line front end.

    penhaz fit data.csv --kappa auto --variance bayes --out results/
    penhaz simulate coverage --shape 13 --scale 100 --n 100 --replicas 1000 --out coverage/
    penhaz simulate ph --shape 12 --scale 100 --n 3000 --beta 1,-1 --cov "u(0,1);u(0,3)"
    penhaz kappa-seq --sizes 100,200,500,1000,2000 --out kappa_seq/

Exit codes: 0 success (possibly with warnings), 1 usage or parse error,
2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from penhaz import __version__
from penhaz.estimator import (
    GRID_POINTS,
    KAPPA_BOUNDS,
    SelectionFailure,
    SingularDesignError,
    fit_fixed_kappa,
    select_kappa,
)
from penhaz.model import SurvivalDataset
from penhaz.simulation import (
    Scenario,
    WeibullTruth,
    coverage_experiment,
    kappa_sequence_experiment,
    parse_covariates,
    ph_experiment,
)
from penhaz.splines import make_knots
from penhaz.variance import Method, estimate_variance, hazard_band, survival_band

log = logging.getLogger("penhaz")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


def fmt(x) -> str:
    """Round-trip safe float formatting for CSV output."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Method):
        return obj.value
    return obj


def write_json(path: Path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_dataset(path) -> SurvivalDataset:
    """Read ``time,event[,x1,...,xp]``; raises UsageError naming the bad line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        if header[:2] != ["time", "event"]:
            raise UsageError(f"{path}:1: header must start with 'time,event'")
        times, events, covs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = float(row[0])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: time {row[0]!r} is not a number") from None
            if not (math.isfinite(t) and t > 0):
                raise UsageError(f"{path}:{lineno}: time must be positive, got {row[0]!r}")
            if row[1].strip() not in ("0", "1"):
                raise UsageError(f"{path}:{lineno}: event must be 0 or 1, got {row[1]!r}")
            try:
                x = [float(c) for c in row[2:]]
            except ValueError:
                raise UsageError(f"{path}:{lineno}: covariate is not a number") from None
            times.append(t)
            events.append(row[1].strip() == "1")
            covs.append(x)
    if not times:
        raise UsageError(f"{path}: no data rows")
    X = np.array(covs, dtype=float).reshape(len(times), len(header) - 2)
    return SurvivalDataset(np.array(times), np.array(events), X)


def _methods(text) -> list[Method]:
    try:
        return [Method(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise UsageError(f"unknown variance method in {text!r}") from exc


def _floats(text) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def _resolved(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    config = _resolved(args)
    data = read_dataset(args.data)
    methods = _methods(args.variance)
    out = _outdir(args)
    spec = make_knots(data.time, args.knots, placement=args.knot_placement)
    lcv_curve = None
    try:
        if args.kappa == "auto":
            sel = select_kappa(data, spec, (args.kappa_min, args.kappa_max), args.kappa_grid)
            fit, lcv_curve = sel.fit, sel.lcv_curve
        else:
            try:
                kappa = float(args.kappa)
            except ValueError:
                raise UsageError(f"--kappa must be 'auto' or a number, got {args.kappa!r}") from None
            if kappa < 0:
                raise UsageError("--kappa must be nonnegative")
            fit = fit_fixed_kappa(data, spec, kappa)
    except (SingularDesignError, SelectionFailure) as exc:
        write_json(out / "fit.json", {"config": config, "error": str(exc)})
        log.error("%s", exc)
        return EXIT_NUMERIC

    payload = {
        "config": config,
        "kappa": fit.kappa,
        "lcv_curve": lcv_curve,
        "beta": fit.beta,
        "theta": fit.theta,
        "loglik": fit.loglik,
        "edf": fit.edf,
        "variance": {},
        "diagnostics": {**fit.diagnostics(), "knots": spec.to_dict(), "n": data.n, "p": data.p},
    }
    if not fit.converged:
        write_json(out / "fit.json", payload)
        log.error("penalized likelihood maximization did not converge")
        return EXIT_NUMERIC

    variances = {}
    for m in methods:
        try:
            variances[m] = estimate_variance(fit, m)
            payload["variance"][m.value] = variances[m].matrix
        except (ArithmeticError, ValueError) as exc:
            payload["diagnostics"][f"variance_error_{m.value}"] = str(exc)
    if not variances:
        write_json(out / "fit.json", payload)
        log.error("no variance estimate could be formed")
        return EXIT_NUMERIC

    var = variances[next(m for m in methods if m in variances)]
    grid = np.linspace(spec.lower, spec.upper, args.grid_points)
    hb = hazard_band(fit, var, spec, grid, args.ci_level)
    sb = survival_band(fit, var, spec, grid, args.ci_level)
    payload["diagnostics"]["curves_variance"] = var.method.value
    payload["diagnostics"]["hazard_truncated"] = hb.truncated
    payload["diagnostics"]["survival_truncated"] = sb.truncated
    write_json(out / "fit.json", payload)
    write_csv(
        out / "curves.csv",
        ["t", "hazard", "hazard_lo", "hazard_hi", "survival", "survival_lo", "survival_hi"],
        zip(grid, hb.estimate, hb.lower, hb.upper, sb.estimate, sb.lower, sb.upper),
    )
    return EXIT_OK


def _scenario_from(args, betas=(), covs=()) -> Scenario:
    try:
        return Scenario(
            truth=WeibullTruth(args.shape, args.scale),
            n=args.n,
            censoring_prop=args.censoring,
            betas=tuple(betas),
            covariate_dists=tuple(covs),
            replicas=args.replicas,
            seed=args.seed,
            estimators=tuple(_methods(args.estimators)),
            ci_level=args.ci_level,
            n_gridpoints=args.grid_points,
            n_knots=args.knots,
            knot_placement=args.knot_placement,
            censoring_mode=args.censoring_mode,
            kappa_bounds=(args.kappa_min, args.kappa_max),
            kappa_grid_points=args.kappa_grid,
            paper_formula=getattr(args, "paper_formula", False),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


COVERAGE_COLUMNS = [
    "target", "estimator", "n", "replicas_used", "estimator_failures",
    "mean_coverage", "coverage_mc_se", "mean_bias", "mean_width",
]
PH_COLUMNS = [
    "coefficient", "estimator", "true", "n", "replicas_used",
    "mean_estimate", "empirical_sd", "mean_sd", "mean_width", "coverage",
]
KAPPA_COLUMNS = ["n", "kappa", "kappa_sqrt_n", "lambda", "kappa_arith_mean", "replicas_used"]


def _emit_report(args, report, columns) -> int:
    out = _outdir(args)
    payload = {"config": _resolved(args), **report.to_dict()}
    write_json(out / "report.json", payload)
    write_csv(out / "report.csv", columns, ([row[c] for c in columns] for row in report.rows))
    if report.warning:
        log.warning("%s", report.warning)
    return EXIT_OK


def cmd_simulate_coverage(args) -> int:
    scenario = _scenario_from(args)
    return _emit_report(args, coverage_experiment(scenario, workers=args.workers), COVERAGE_COLUMNS)


def cmd_simulate_ph(args) -> int:
    betas = _floats(args.beta)
    try:
        covs = parse_covariates(args.cov)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not betas:
        raise UsageError("--beta needs at least one coefficient")
    scenario = _scenario_from(args, betas, covs)
    return _emit_report(args, ph_experiment(scenario, workers=args.workers), PH_COLUMNS)


def cmd_kappa_seq(args) -> int:
    sizes = [int(s) for s in _floats(args.sizes)]
    try:
        report = kappa_sequence_experiment(
            sizes,
            WeibullTruth(args.shape, args.scale),
            args.seed,
            replicas=args.replicas,
            workers=args.workers,
            censoring_prop=args.censoring,
            n_knots=args.knots,
            knot_placement=args.knot_placement,
            censoring_mode=args.censoring_mode,
            kappa_bounds=(args.kappa_min, args.kappa_max),
            kappa_grid_points=args.kappa_grid,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return _emit_report(args, report, KAPPA_COLUMNS)


def _default_seed() -> int:
    env = os.environ.get("PENHAZ_SEED")
    if env is None:
        return 42
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PENHAZ_SEED must be an integer, got {env!r}") from None


def _add_model_opts(p, grid_points=100):
    p.add_argument("--knots", type=int, default=7, help="distinct knots incl. boundaries")
    p.add_argument("--knot-placement", choices=["equal", "quantile"], default="equal")
    p.add_argument("--kappa-min", type=float, default=KAPPA_BOUNDS[0])
    p.add_argument("--kappa-max", type=float, default=KAPPA_BOUNDS[1])
    p.add_argument("--kappa-grid", type=int, default=GRID_POINTS, help="log-grid points before refinement")
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--grid-points", type=int, default=grid_points)
    p.add_argument("--out", default=".")


def _add_sim_opts(p, seed, shape, n):
    p.add_argument("--shape", type=float, default=shape)
    p.add_argument("--scale", type=float, default=100.0)
    p.add_argument("--n", type=int, default=n)
    p.add_argument("--censoring", type=float, default=0.2)
    p.add_argument("--censoring-mode", choices=["random", "administrative"], default="random")
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def build_parser(seed: int = 42) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="penhaz", description="Penalized-likelihood hazard estimation")
    parser.add_argument("--version", action="version", version=f"penhaz {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a dataset from CSV")
    p.add_argument("data")
    p.add_argument("--kappa", default="auto", help="'auto' (LCV_a) or a fixed value")
    p.add_argument("--variance", default="bayes", help="comma list of bayes,sandwich,np-sandwich")
    _add_model_opts(p)
    p.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="Monte Carlo experiments")
    simsub = sim.add_subparsers(dest="experiment", required=True)
    p = simsub.add_parser("coverage", help="survival/hazard band coverage")
    _add_sim_opts(p, seed, shape=13.0, n=100)
    p.add_argument("--estimators", default="bayes,sandwich,np-sandwich")
    _add_model_opts(p)
    p.set_defaults(func=cmd_simulate_coverage)

    p = simsub.add_parser("ph", help="regression coefficient inference")
    _add_sim_opts(p, seed, shape=12.0, n=3000)
    p.add_argument("--beta", default="1")
    p.add_argument("--cov", default="u(0,1)")
    p.add_argument("--estimators", default="bayes")
    p.add_argument("--paper-formula", action="store_true",
                   help="multiply -log U by exp(X beta) when generating times")
    _add_model_opts(p)
    p.set_defaults(func=cmd_simulate_ph)

    p = sub.add_parser("kappa-seq", help="selected kappa as a function of n")
    _add_sim_opts(p, seed, shape=13.0, n=100)
    p.add_argument("--sizes", default="100,200,500,1000,2000")
    p.set_defaults(replicas=10)
    _add_model_opts(p)
    p.set_defaults(func=cmd_kappa_seq)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser(_default_seed())
    except UsageError as exc:
        print(f"penhaz: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"penhaz: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"penhaz: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
