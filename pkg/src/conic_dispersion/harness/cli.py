"""Command-line entry point.

    conic-dispersion <subcommand> [--config PATH] [--set key=value ...]
                     [--out DIR]

Subcommands are the experiment names; ``suite`` runs the whole check
battery at the configured level.  Exit status 0 iff every enabled check
passed.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys

from .config import (ConfigError, apply_overrides, default_config_path,
                     load_config)
from .experiments import EXPERIMENTS, run_experiment

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conic-dispersion",
        description="Numerical experiments for dispersive analysis on "
                    "asymptotically conic warped products.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the '{name}' experiment")
        p.add_argument("--config", default=None,
                       help="TOML config (defaults to the reference config)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config or default_config_path())
        cfg = apply_overrides(cfg, args.overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out
    if out_dir is None:
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        out_dir = os.path.join("runs", f"{args.subcommand}-{stamp}")
    try:
        manifest = run_experiment(args.subcommand, cfg, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for check, ok in sorted(manifest.verdicts.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {check}")
    for key, value in sorted(manifest.observed.items()):
        print(f"      {key} = {value:.6g}" if isinstance(value, float)
              else f"      {key} = {value}")
    print(f"artifacts: {out_dir}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
