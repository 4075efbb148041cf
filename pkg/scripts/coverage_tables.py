"""Pointwise coverage of survival and hazard bands, Weibull(13, 100) truth.

    python3 scripts/coverage_tables.py --replicas 1000 --sizes 100,500,1000

Prints one table for the survival function and one for the hazard, with a
row per variance estimator and a column per sample size.
"""
import time

from _common import base_parser, dump
from penhaz.cli import COVERAGE_COLUMNS
from penhaz.simulation import Scenario, WeibullTruth, coverage_experiment


def main():
    p = base_parser(__doc__.splitlines()[0], replicas=1000)
    p.add_argument("--sizes", default="100,500,1000")
    p.add_argument("--censoring", type=float, default=0.2)
    p.add_argument("--knots", type=int, default=7)
    args = p.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    reports = {}
    for n in sizes:
        start = time.time()
        scen = Scenario(WeibullTruth(13, 100), n=n, censoring_prop=args.censoring, replicas=args.replicas,
                        seed=args.seed, n_knots=args.knots)
        reports[n] = rep = coverage_experiment(scen, workers=args.workers)
        dump(args.out, f"coverage_n{n}", rep, COVERAGE_COLUMNS)
        print(f"n={n}: {time.time() - start:.0f}s, {rep.failures} failed replicas")
    for target in ("survival", "hazard"):
        print(f"\n{target} coverage (%)")
        print(f"{'estimator':<14}" + "".join(f"{'n=' + str(n):>10}" for n in sizes))
        for est in ("bayes", "np-sandwich", "sandwich"):
            cells = [next(r for r in reports[n].rows if r["target"] == target and r["estimator"] == est)
                     for n in sizes]
            print(f"{est:<14}" + "".join(f"{100 * c['mean_coverage']:>10.1f}" for c in cells))


if __name__ == "__main__":
    main()
