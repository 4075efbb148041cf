"""Regression coefficient inference at n = 3000 with one and two covariates.

    python3 scripts/coefficient_tables.py --replicas 1000
"""
import time

from _common import base_parser, dump
from penhaz.cli import PH_COLUMNS
from penhaz.simulation import Scenario, UniformRange, WeibullTruth, ph_experiment
from penhaz.variance import Method

DESIGNS = {
    "one_covariate": ((1.0,), (UniformRange(0, 1),)),
    "two_covariates": ((1.0, -1.0), (UniformRange(0, 1), UniformRange(0, 3))),
}


def main():
    p = base_parser(__doc__.splitlines()[0], replicas=1000)
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--paper-formula", action="store_true")
    args = p.parse_args()
    for name, (betas, dists) in DESIGNS.items():
        start = time.time()
        scen = Scenario(WeibullTruth(12, 100), n=args.n, replicas=args.replicas, seed=args.seed, betas=betas,
                        covariate_dists=dists, estimators=(Method.BAYES,), paper_formula=args.paper_formula)
        rep = ph_experiment(scen, workers=args.workers)
        dump(args.out, f"ph_{name}", rep, PH_COLUMNS)
        print(f"\n{name} ({time.time() - start:.0f}s, {rep.failures} failed)")
        print(f"{'coef':<7}{'true':>7}{'mean':>9}{'emp sd':>9}{'Bayes sd':>10}{'width':>8}{'cover':>8}")
        for r in rep.rows:
            print(f"{r['coefficient']:<7}{r['true']:>7.2f}{r['mean_estimate']:>9.4f}{r['empirical_sd']:>9.4f}"
                  f"{r['mean_sd']:>10.4f}{r['mean_width']:>8.3f}{100 * r['coverage']:>8.1f}")


if __name__ == "__main__":
    main()
