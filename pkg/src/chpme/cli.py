"""Command-line entry point: ``chpme <subcommand> --config <path> --out <dir>``."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_scenario
from .harness import SUBCOMMAND_STAGES, run_scenario, run_sweep

SUBCOMMANDS = ("geometry", "certify", "barrier-check", "profile", "solve", "sweep")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chpme", description="Radial porous medium experiments on model manifolds.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="scenario file (INI)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--strict", action="store_true", help="treat residual warnings as failures")
        if name == "sweep":
            s.add_argument("--axis", help="section.key to vary (default: [sweep] axis)")
            s.add_argument("--values", help="comma-separated values (default: [sweep] values)")
            s.add_argument("--workers", type=int, help="parallel worker processes")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        sc = load_scenario(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "sweep":
        values = None
        if args.values is not None:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        try:
            rows = run_sweep(sc, args.out, axis=args.axis, values=values, workers=args.workers)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        for r in rows:
            print(f"{r['axis']}={r['value']:g}: status={r.get('status')} t_est={r.get('t_est')} "
                  f"exponent={r.get('profile_exponent')} {'ok' if r['ok'] else 'FAILED ' + r.get('error', '')}")
        return 0
    stages = SUBCOMMAND_STAGES.get(args.command)
    res = run_scenario(sc, args.out, stages)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for label, text, ok in res.assertions:
        print(f"{label}: {text} -> {dict([(True, 'pass'), (False, 'FAIL'), (None, 'skipped')])[ok]}")
    return 1 if res.failed(args.strict) else 0


if __name__ == "__main__":
    sys.exit(main())
