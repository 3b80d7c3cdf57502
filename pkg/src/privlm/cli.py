"""Command-line driver for the batch pipeline.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .corpus import IngestError
from .pipeline import STAGES, ConfigError, StageError, load_config, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privlm",
        description="Identifier blacklists, privacy-preserving language-modeling "
        "plans, tiny-LM training, and privacy audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("-c", "--config", required=True, help="pipeline INI file")
    p = sub.add_parser("run", help="run a sequence of stages (default: all)")
    p.add_argument("-c", "--config", required=True, help="pipeline INI file")
    p.add_argument(
        "--stages",
        default=",".join(STAGES),
        help="comma-separated subset of: " + ", ".join(STAGES),
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 1
    try:
        if args.command == "run":
            stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
            run(cfg, stages)
        else:
            run(cfg, (args.command,))
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 1
    except (StageError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
