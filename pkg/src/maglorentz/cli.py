"""Command line: ``maglorentz <experiment> [--config PATH] [--seed U64] [--workers N] [--out DIR]``."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import run


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maglorentz", description="Magnetic Lorentz gas experiments.")
    sub = ap.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    helps = {
        "scatter": "scattering-angle table and cross section",
        "micro": "Monte Carlo estimate of the microscopic density",
        "kinetic": "deterministic solve of a limit equation",
        "converge": "distances to the limit equations across eps",
        "pathology": "frequencies of the excluded collision events across eps",
        "compare": "memory contrast between hard disks and a smooth potential",
    }
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="PATH", help="sectioned key = value file")
        p.add_argument("--seed", type=_u64, metavar="U64", help="overrides run.seed")
        p.add_argument("--workers", type=_positive, metavar="N",
                       help="worker processes (default: MAGLORENTZ_WORKERS, else run.workers)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"run.experiment": args.experiment}
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.out is not None:
        overrides["run.out"] = args.out
    workers = args.workers
    if workers is None and os.environ.get("MAGLORENTZ_WORKERS"):
        try:
            workers = _positive(os.environ["MAGLORENTZ_WORKERS"])
        except (ValueError, argparse.ArgumentTypeError):
            print("error: MAGLORENTZ_WORKERS must be a positive integer", file=sys.stderr)
            return 2
    if workers is not None:
        overrides["run.workers"] = workers
    try:
        cfg = load_config(args.config, overrides)
        report = run(cfg, workers=cfg["run.workers"])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for c in report.checks:
        tag = "PASS" if c.ok else "FAIL"
        kind = "" if c.binding else " (reported)"
        print(f"{tag} {c.name}{kind}: {c.detail}")
    print(f"wrote {len(report.files)} files to {report.out}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
