"""``msle-lab validate|sample|drive|simulate|compare``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .harness import ExperimentConfig


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg


def _validate(args) -> int:
    seeds = [args.seed] if args.seed is not None else range(1, 11)
    masses = (0.0,) if args.massless else (0.0, 0.1, 0.3, 0.5)
    checks = harness.cmd_validate(seeds, masses, negative_control=args.negative_control)
    for c in checks:
        print(c.line())
    if args.out:
        lines = ["check,residual,threshold,passed"]
        lines += [f"{c.name},{c.residual!r},{c.threshold!r},{int(c.passed)}" for c in checks]
        path = Path(args.out) / "validate.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    return 0 if all(c.passed for c in checks) else 1


def _batch(command):
    def run(args) -> int:
        for path in command(_config(args), args.seed, args.out):
            print(path)
        return 0
    return run


def _compare(args) -> int:
    try:
        report = harness.cmd_compare(_config(args), args.seed, args.out)
    except harness.InsufficientSamples as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for row in report.rows:
        print(f"{'PASS' if row['passed'] else 'FAIL'} mesh={row['mesh']} m={row['m']:g} "
              f"t={row['t']:g} ks_p={row['ks_p']:.3g} mean_diff={row['mean_diff']:.4f} "
              f"se={row['pooled_se']:.4f}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msle-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "validate": _validate,
        "sample": _batch(harness.cmd_sample),
        "drive": _batch(harness.cmd_drive),
        "simulate": _batch(harness.cmd_simulate),
        "compare": _compare,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON or TOML experiment file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", default=None, help="output directory")
        if name == "validate":
            p.add_argument("--negative-control", action="store_true",
                           help="run the solver checks with a loose iterative solver")
            p.add_argument("--massless", action="store_true", help="only m = 0")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
