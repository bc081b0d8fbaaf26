"""Command-line entry point: schsim <study> --config <path> [options].

Exit codes: 0 success, 2 configuration error, 3 solver divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .config import load_config_file
from .errors import ConfigError, LinearSolveError, NewtonDivergedError, NumericOverflowError
from .studies import STUDY_KINDS, run_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schsim",
        description="Simulation and analysis studies for the stochastic Cahn-Hilliard equation",
    )
    sub = parser.add_subparsers(dest="study", required=True, metavar="<study>")
    for kind in STUDY_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} study")
        p.add_argument("--config", required=True, help="path to the JSON configuration")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=1, help="sample-level worker count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config_file(args.config, default_study=args.study)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        payload = run_study(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonDivergedError, NumericOverflowError, LinearSolveError) as exc:
        print(f"solver divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(json.dumps(_summary(payload), indent=2, sort_keys=True))
    return EXIT_OK


def _summary(payload: dict) -> dict:
    keep = ("study", "slope", "ci_low", "ci_high", "slope_reason", "fingerprint",
            "positive_fraction", "mass", "lambda_min_quantiles")
    return {k: payload[k] for k in keep if k in payload}


if __name__ == "__main__":
    sys.exit(main())
