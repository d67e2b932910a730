"""Command-line interface.

Subcommands: learn, solve, evaluate, bounds, sweep, wasserstein-check.
Every configuration key is exposed as a flag of the same name; flag values
override the config file, which overrides the defaults. The master seed can
also be set through CTRLDIFFUSE_SEED (flags still win). Exit codes:
0 success, 2 validation error, 3 numerical failure, 4 partial sweep.
"""

import argparse
import os
import sys
from dataclasses import fields

from . import runs
from .config import ExperimentConfig, load_config
from .errors import (ModelEvaluationError, NonConvergenceError,
                     ValidationError)
from .qlearn import ExplorationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="flat TOML configuration file")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (same as --out_dir)")
    for f in fields(ExperimentConfig):
        parser.add_argument(f"--{f.name}", dest=f"key_{f.name}",
                            metavar="V", default=None,
                            help=f"override config key {f.name}")


def _build_config(args) -> ExperimentConfig:
    overrides = {}
    env_seed = os.environ.get("CTRLDIFFUSE_SEED")
    if env_seed is not None:
        overrides["seed"] = env_seed
    for f in fields(ExperimentConfig):
        v = getattr(args, f"key_{f.name}", None)
        if v is not None:
            overrides[f.name] = v
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrldiffuse",
        description=("Tabular Q-learning for sampled, quantized controlled "
                     "diffusions, with oracle solves, performance-gap "
                     "evaluation, and closed-form bound calculators."))
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
            ("learn", "run the exploration trajectory and learn a table"),
            ("solve", "estimate the finite model and solve it exactly"),
            ("evaluate", "gap of a learned/solved table vs the reference"),
            ("bounds", "evaluate error bounds and sample-size expressions"),
            ("sweep", "learn/evaluate/bound over a grid of cells"),
            ("wasserstein-check", "kernel sensitivity checks")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "evaluate":
            p.add_argument("--qtable", metavar="PATH", default=None,
                           help="learned table CSV to evaluate")
            p.add_argument("--qstar", metavar="PATH", default=None,
                           help="solved table CSV to evaluate")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = _build_config(args)
        if args.command == "learn":
            res = runs.run_learn(cfg)
            print(f"wrote qtable.csv, history.csv, manifest.json to {res['out']}")
        elif args.command == "solve":
            res = runs.run_solve(cfg)
            print(f"wrote mdp.bin, qstar.csv, manifest.json to {res['out']}")
        elif args.command == "evaluate":
            res = runs.run_evaluate(cfg, qtable_path=args.qtable,
                                    qstar_path=args.qstar)
            r = res["report"]
            print(f"gap = {r.gap:.6g} +- {r.gap_se:.6g}  "
                  f"bound_total = {r.bound_total:.6g}  "
                  f"violation = {r.violation}")
            if r.bound_note:
                print(f"note: {r.bound_note}")
            print(f"wrote gap_report.json, gap_report.csv to {res['out']}")
        elif args.command == "bounds":
            res = runs.run_bounds(cfg)
            print(res["table"])
            print(f"wrote bounds.csv to {res['out']}")
        elif args.command == "sweep":
            res = runs.run_sweep(cfg)
            print(f"wrote sweep.csv ({len(res['rows'])} cells, "
                  f"{res['n_failed']} failed) to {res['out']}")
            if res["n_failed"]:
                return EXIT_PARTIAL
        elif args.command == "wasserstein-check":
            res = runs.run_wcheck(cfg)
            n_fail = sum(not r["passed"] for r in res["rows"])
            print(f"{len(res['rows'])} pairs checked, {n_fail} failed; "
                  f"wrote wasserstein.json, wasserstein.csv to {res['out']}")
        return EXIT_OK
    except (ValidationError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ModelEvaluationError, NonConvergenceError, ExplorationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
