"""Command line: ``sqnls run|fetch|bench``."""

import argparse
import logging
import sys

from . import __version__
from .errors import SQNError
from .harness import DATASETS, PRESETS, fetch_dataset, load_config, run_experiment


def _add_run_flags(p):
    p.add_argument("--seed", type=int, dest="seed_base", help="seed of the first repetition")
    p.add_argument("--reps", type=int, help="number of repetitions per method")
    p.add_argument("--out", help="output directory")
    p.add_argument("--kmax", type=int, dest="k_max", help="iterations per run")
    p.add_argument("--method", action="append", dest="methods", metavar="METHOD",
                   help="method to run (alg1, sgd, adam, svrg); repeatable")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--budget", type=float, dest="budget_s", help="wall-clock budget per run [s]")
    p.add_argument("--timing", choices=("wall", "none"),
                   help="'none' records zero elapsed time for byte-stable output")
    p.add_argument("--no-plots", action="store_false", dest="plots", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="sqnls", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment described by a YAML file")
    p_run.add_argument("config")
    _add_run_flags(p_run)

    p_fetch = sub.add_parser("fetch", help="download a LIBSVM dataset into the cache")
    p_fetch.add_argument("dataset", help=f"one of: {', '.join(sorted(DATASETS))}")

    p_bench = sub.add_parser("bench", help="run a built-in desk-scale benchmark")
    p_bench.add_argument("problem", choices=sorted(PRESETS))
    _add_run_flags(p_bench)
    return parser


def _overrides(args):
    keys = ("seed_base", "reps", "out", "k_max", "methods", "workers", "budget_s", "timing", "plots")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _report(result):
    for r in result.runs:
        status = f"final_cost={r.final_cost:.6g}" if r.ok else f"FAILED {r.error}"
        print(f"{r.method:>5} seed {r.seed}: {status}")
    print(f"results written to {result.out}")
    for r in result.failures:
        print(f"error: {r.method} seed {r.seed}: {r.error}", file=sys.stderr)
    return result.exit_code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fetch":
            print(fetch_dataset(args.dataset))
            return 0
        if args.command == "run":
            cfg = load_config(args.config, **_overrides(args))
        else:
            preset = dict(PRESETS[args.problem], out=f"bench_{args.problem}")
            preset.update(_overrides(args))
            cfg = load_config(None, **preset)
        return _report(run_experiment(cfg))
    except (SQNError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
