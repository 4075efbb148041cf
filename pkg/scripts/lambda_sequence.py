"""Selected smoothing parameter against sample size (kappa_n, kappa_n / sqrt(n), kappa_n / n).

    python3 scripts/lambda_sequence.py --replicas 10 --sizes 100,200,500,1000,2000
"""
from _common import base_parser, dump
from penhaz.cli import KAPPA_COLUMNS
from penhaz.simulation import WeibullTruth, kappa_sequence_experiment


def main():
    p = base_parser(__doc__.splitlines()[0], replicas=10)
    p.add_argument("--sizes", default="100,200,500,1000,2000")
    args = p.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rep = kappa_sequence_experiment(sizes, WeibullTruth(13, 100), args.seed, replicas=args.replicas,
                                    workers=args.workers)
    dump(args.out, "kappa_sequence", rep, KAPPA_COLUMNS)
    print(f"{'n':>6}{'kappa_n':>14}{'kappa_n/sqrt(n)':>18}{'lambda_n':>12}")
    for r in rep.rows:
        print(f"{r['n']:>6}{r['kappa']:>14.4g}{r['kappa_sqrt_n']:>18.4g}{r['lambda']:>12.4g}")
    print(f"log-log slope of lambda_n: {rep.extra['lambda_loglog_slope']:.3f}")


if __name__ == "__main__":
    main()
