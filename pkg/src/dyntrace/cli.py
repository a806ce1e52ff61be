"""Command-line driver.

    dyntrace synth  --n 200 --steps 100 --regime low --trials 20 --seed 7 --out results.csv
    dyntrace graph  --nodes 500 --steps 50 --budget 763 --out -
    dyntrace file   --file stream.seq --budget 2000
    dyntrace static --file mat.seq --eps 0.1 --delta 0.05 --p 1 --seed 1

Experiment subcommands write one CSV row per (estimator, trial, step) and
print a per-estimator summary on standard error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench
from .dynamic import Mode
from .formats import FormatError, read_graph_file, read_sequence_file, write_records
from .static import StaticParams, hutch_pp

ESTIMATOR_LABELS = ("tree", "hutch", "diffsum", "exact")


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _open_unit(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _schatten_p(text):
    v = float(text)
    if not 1.0 <= v <= 2.0:
        raise argparse.ArgumentTypeError(f"must lie in [1, 2], got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"must be a 64-bit unsigned integer, got {text}")
    return v


def _estimator_list(text):
    labels = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [t for t in labels if t not in ESTIMATOR_LABELS]
    if unknown or not labels:
        raise argparse.ArgumentTypeError(
            f"unknown estimator(s) {', '.join(unknown) or '(none)'}; "
            f"choose from {','.join(ESTIMATOR_LABELS)}")
    return labels


def _common(p: argparse.ArgumentParser):
    p.add_argument("--eps", type=_positive_float, default=0.05)
    p.add_argument("--delta", type=_open_unit, default=0.1)
    p.add_argument("--p", type=_schatten_p, default=1.0)
    p.add_argument("--seed", type=_seed, default=0)


def _experiment(p: argparse.ArgumentParser):
    _common(p)
    p.add_argument("--alpha", type=_positive_float, default=None,
                   help="drift bound given to the tree (default: measured x1.1)")
    p.add_argument("--budget", type=_positive_int, default=None,
                   help="total queries per estimator; the tree fits eps to it")
    p.add_argument("--trials", type=_positive_int, default=1)
    p.add_argument("--estimators", type=_estimator_list, default=["tree", "hutch", "diffsum"])
    p.add_argument("--mode", choices=[m.value for m in Mode], default="partitioned")
    p.add_argument("--groups", type=_positive_int, default=None)
    p.add_argument("--relative", action="store_true",
                   help="eps is a fraction of |tr A_1| instead of an absolute error")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", default="-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyntrace",
                                     description="Dynamic trace estimation experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="synthetic perturbation stream")
    p.add_argument("--n", type=_positive_int, default=200)
    p.add_argument("--steps", type=_positive_int, default=100)
    p.add_argument("--regime", choices=["low", "high"], default="low")
    _experiment(p)

    p = sub.add_parser("graph", help="dynamic triangle counting")
    p.add_argument("--file", default=None, help="graph file (default: random graph)")
    p.add_argument("--nodes", type=_positive_int, default=500)
    p.add_argument("--steps", type=_positive_int, default=50)
    p.add_argument("--model", choices=["collab", "gnp"], default="collab")
    p.add_argument("--papers", type=_positive_int, default=600)
    p.add_argument("--edge-prob", type=_open_unit, default=0.02)
    _experiment(p)

    p = sub.add_parser("file", help="matrix sequence from a file")
    p.add_argument("--file", required=True)
    _experiment(p)

    p = sub.add_parser("static", help="one Hutch++ estimate of the first matrix in a file")
    p.add_argument("--file", required=True)
    _common(p)
    return parser


def _estimators(args) -> list:
    out = []
    for label in args.estimators:
        if label == "tree":
            out.append(bench.TreeEstimator(eps=args.eps, delta=args.delta, p=args.p,
                                           mode=args.mode, groups=args.groups,
                                           alpha=args.alpha, relative=args.relative,
                                           fit_budget=args.budget is not None))
        else:
            out.append(bench.ESTIMATORS[label]())
    return out


def _config(args):
    if args.subcommand == "synth":
        return bench.SyntheticConfig(args.n, args.steps, args.regime, seed=args.seed)
    if args.subcommand == "graph":
        if args.file is not None:
            return bench.FixedConfig(bench.graph_instance(read_graph_file(args.file)))
        return bench.GraphConfig(args.nodes, args.steps, args.model, args.papers,
                                 args.edge_prob, seed=args.seed)
    return bench.FixedConfig.from_operators(read_sequence_file(args.file).operators)


def _run_static(args) -> int:
    op = read_sequence_file(args.file)[0]
    est = hutch_pp(op, StaticParams(args.eps, args.delta, args.p),
                   np.random.default_rng(args.seed), exact_fallback=True)
    print(f"estimate={est.value!r} queries={est.queries_used}")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.subcommand == "static":
            return _run_static(args)
        estimators = _estimators(args)
        if args.budget is None and "tree" not in args.estimators \
                and any(e != "exact" for e in args.estimators):
            parser.error("--budget is required when the tree estimator is not run")
        records = bench.run_experiment(_config(args), estimators, args.trials, args.seed,
                                       args.budget, args.jobs)
        write_records(records, args.out)
        for label, stats in bench.summarize(records).items():
            line = " ".join(f"{k}={v:.6g}" for k, v in stats.items())
            print(f"{label}: {line}", file=sys.stderr)
        return 0
    except (FormatError, OSError, ValueError, bench.EstimatorError) as exc:
        print(f"dyntrace: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
