"""Feature-export CLI.

Usage: extract --model <name> --manifest <path> --out <root> [--device <id>]

Exit codes: 0 success, 1 usage error, 2 when any image failed to export.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .backbones import WeightLoadError
from .extract import extract
from .specs import BATCH_SIZE, ENCODERS, encoder_spec


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _device(arg: str) -> str:
    return f"cuda:{arg}" if arg.isdigit() else arg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="extract", description=__doc__)
    parser.add_argument("--model", required=True, help=", ".join(ENCODERS))
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--device", default="cpu", help="cpu, cuda:N, or a bare GPU id")
    parser.add_argument("--batch-size", type=int, default=BATCH_SIZE)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument(
        "--random-init",
        action="store_true",
        help="build the architecture with seeded random weights (no downloads)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = encoder_spec(args.model)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    try:
        report = extract(
            args.manifest,
            spec,
            args.out,
            device=_device(args.device),
            pretrained=not args.random_init,
            seed=args.seed,
            batch_size=args.batch_size,
        )
    except (WeightLoadError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"{spec.name}: wrote {len(report.written)} feature files "
        f"({spec.grid}x{spec.grid}x{spec.feature_dim}) under {args.out}"
    )
    if report.failures:
        for image, reason in report.failures:
            print(f"failed: {image}: {reason}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
