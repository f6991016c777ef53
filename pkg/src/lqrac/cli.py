"""Command-line front end.

Subcommands
-----------
solve        Riccati solution (P*, K*, J*) and the constants report.
evaluate     Multi-epoch critic on the configured fixed gain.
train        One training run (oracle or critic gradients), trace CSV.
experiment   Multi-seed sweep: per-seed CSVs, aggregate CSV, SVG plot.
constants    The full theory-constants report as key = value text.

All subcommands accept ``--config path.json`` (defaults to the built-in
scalar benchmark) plus the overrides listed in ``--help``.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys

from .errors import LqracError
from .harness import (
    RunConfig,
    benchmark_config,
    cmd_constants,
    cmd_evaluate,
    cmd_experiment,
    cmd_solve,
    cmd_train,
)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else benchmark_config()
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "seeds", None):
        cfg.num_seeds = args.seeds
    if getattr(args, "seed", None) is not None:
        cfg.seed_list = [args.seed]
    if getattr(args, "oracle_diagnostics", False):
        cfg.oracle_diagnostics = True
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg


def _emit(payload, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        if isinstance(payload, dict):
            for key, val in payload.items():
                print(f"{key}: {val}")
        else:
            print(payload)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqrac", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults to the scalar benchmark)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--mode", choices=["oracle", "critic"])
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", type=int, help="number of seeds for experiment sweeps")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--oracle-diagnostics", action="store_true", dest="oracle_diagnostics")
        p.add_argument("--workers", type=int)

    for name in ("solve", "evaluate", "train", "experiment", "constants"):
        common(sub.add_parser(name))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "solve":
            _emit(cmd_solve(cfg), args.format)
        elif args.command == "constants":
            print(cmd_constants(cfg), end="")
        elif args.command == "evaluate":
            _emit(cmd_evaluate(cfg, seed=args.seed), args.format)
        elif args.command == "train":
            record = cmd_train(cfg, args.out, seed=args.seed)
            _emit(
                {
                    "seed": record.seed,
                    "final_err": record.final_err,
                    "diverged_at": record.diverged_at,
                    "rows": len(record.rows),
                    "out": args.out,
                },
                args.format,
            )
        elif args.command == "experiment":
            summary = cmd_experiment(cfg, args.out)
            _emit(summary, args.format)
    except LqracError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
