"""Command-line entry point: ``affinestab <verb> [--config FILE] [--out DIR] [--seed N] [--grid N]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import AffineStabError
from .harness import ExperimentConfig, load_config, run
from .optimize import write_snapshot

VERBS = {
    "solve": "solve",
    "tikhonov": "tikhonov-sweep",
    "rho-sweep": "rho-sweep",
    "zeta-sweep": "zeta-sweep",
    "diagnose": "diagnostics",
    "convergence": "convergence",
}

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affinestab", description=__doc__)
    parser.add_argument("verb", choices=sorted(VERBS))
    parser.add_argument("--config", type=Path, help="flat key = value experiment file")
    parser.add_argument("--out", type=Path, help="directory for CSV output")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--grid", help="grid size, or comma-separated ascending sizes")
    parser.add_argument("--preset", help="problem preset (overrides the config file)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    overrides = {"experiment": VERBS[args.verb], "seed": args.seed, "preset": args.preset}
    if args.grid:
        overrides["grids"] = tuple(int(v) for v in args.grid.split(","))
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        result = run(config)
    except (AffineStabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    snapshot = result.details.pop("snapshot", None)
    for key, value in result.details.items():
        print(f"{key}: {value}")
    if result.report is not None:
        print(f"fitted exponent: {result.report.exponent:.4f} (r^2 = {result.report.r_squared:.4f})")
    print(f"verdict: {result.verdict}")
    if args.out:
        path = result.write(args.out)
        if path:
            print(f"wrote {path}")
        if snapshot is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            print(f"wrote {write_snapshot(args.out / 'snapshot.csv', snapshot)}")
    return EXIT_FAIL if result.verdict == "FAIL" else EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
