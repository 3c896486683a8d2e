"""Command line: ``stattail <experiment> --config PATH [--seed S] [--out DIR] [--threads T]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, parse_config
from .runner import EXIT_ERROR, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stattail", description=__doc__)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, type=Path, help="TOML experiment document")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: $STATTAIL_OUT or ./stattail-out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    cfg = replace(cfg, experiment=args.experiment)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must lie in [0, 2^64)", file=sys.stderr)
            return EXIT_ERROR
        cfg = replace(cfg, seed=args.seed)
    return run_experiment(cfg, args.out, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
