"""Command-line interface for the viewpoint benchmark.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import binning, harness, membank, metrics
from .config import load_config
from .errors import PipelineError


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_centers(text: str) -> binning.BinSpec:
    return binning.BinSpec(tuple(float(v) for v in text.split(",")))


def _parse_bins(text: str) -> set[float]:
    return {float(v) for v in text.split(",")}


def _parse_feature_roots(pairs: list[str]) -> dict[str, str]:
    roots = {}
    for pair in pairs:
        name, sep, root = pair.partition("=")
        if not sep or not name or not root:
            raise PipelineError(f"--features expects NAME=PATH, got {pair!r}")
        roots[name] = root
    return roots


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run config; flags override it")
    p.add_argument("--manifest", type=Path)
    p.add_argument(
        "--features",
        action="append",
        metavar="NAME=PATH",
        help="feature root per model, repeatable",
    )
    p.add_argument("--output-root", type=Path)
    p.add_argument("--capacity", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--difficulties", help="comma-separated difficulty names")
    p.add_argument("--shards", type=int)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--upsample-mode", choices=("bilinear", "nearest"))
    p.add_argument("--save-masks", action="store_true", default=None)
    p.add_argument("--save-distributions", action="store_true", default=None)


def _config_from_args(args: argparse.Namespace, **extra) -> "RunConfig":
    overrides = {
        "manifest": args.manifest,
        "output_root": args.output_root,
        "capacity": args.capacity,
        "k": args.k,
        "temperature": args.temperature,
        "seed": args.seed,
        "shards": args.shards,
        "chunk_size": args.chunk_size,
        "upsample_mode": args.upsample_mode,
        "save_masks": args.save_masks,
        "save_distributions": args.save_distributions,
    }
    if args.difficulties:
        overrides["difficulties"] = tuple(args.difficulties.split(","))
    if args.features:
        overrides["feature_roots"] = _parse_feature_roots(args.features)
    overrides.update(extra)
    return load_config(args.config, overrides)


def _category_sizes_gb(root: Path) -> dict[int, float]:
    sizes = {}
    for d in root.iterdir():
        if d.is_dir() and d.name.isdigit():
            total = sum(p.stat().st_size for p in d.rglob("*") if p.is_file())
            sizes[int(d.name)] = total / 1e9
    return sizes


def _cmd_bin_views(args: argparse.Namespace) -> int:
    spec = _parse_centers(args.centers)
    manifest, exclusions = binning.build_manifest(
        args.root, spec, args.tolerance, out_root=None
    )
    binning.save_manifest(manifest, args.output)
    binning.write_exclusion_log(exclusions, Path(str(args.output) + ".exclusions.tsv"))
    n_instances = sum(len(c.instances) for c in manifest.categories)
    print(
        f"binned {n_instances} valid instances across "
        f"{len(manifest.categories)} classes; excluded {len(exclusions)}"
    )
    return 0


def _cmd_build_subset(args: argparse.Namespace) -> int:
    spec = _parse_centers(args.centers)
    include = None
    if args.size_filter:
        lo, hi = args.size_filter
        sizes = _category_sizes_gb(Path(args.root))
        include = {c for c, gb in sizes.items() if lo <= gb <= hi}
        print(f"size filter [{lo}, {hi}] GB keeps categories {sorted(include)}")
    manifest, exclusions = binning.build_manifest(
        args.root,
        spec,
        args.tolerance,
        out_root=None if args.no_copy else args.out,
        include_classes=include,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    binning.save_manifest(manifest, out / "manifest.json")
    binning.write_exclusion_log(exclusions, out / "exclusions.tsv")
    n_instances = sum(len(c.instances) for c in manifest.categories)
    print(f"curated {n_instances} instances into {out}; excluded {len(exclusions)}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    manifest = binning.load_manifest(args.manifest)
    stats = binning.angle_stats(manifest)
    rows = [
        (
            str(r.class_number),
            r.class_name,
            metrics.fmt_float(r.mean_error_deg),
            metrics.fmt_float(r.std_error_deg),
            str(r.images_per_bin),
        )
        for r in stats.rows
    ]
    header = ("class_number", "class_name", "mean_error_deg", "std_error_deg", "images_per_bin")
    if args.output:
        metrics.write_csv(args.output, header, rows)
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(row))
    return 0


def _cmd_build_bank(args: argparse.Namespace) -> int:
    manifest = binning.load_manifest(args.manifest)
    bank = membank.build_bank(
        manifest,
        _parse_bins(args.bins),
        capacity=args.capacity,
        seed=args.seed,
        feature_root=args.feature_root,
        sample_policy=args.policy,
    )
    membank.save_bank(bank, args.output)
    print(f"bank of {len(bank)} entries (dim {bank.dim}) written to {args.output}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    results = harness.run_experiment_a(config)
    for r in results:
        print(
            f"{r.model} {r.difficulty} capacity={r.capacity}: "
            f"miou={r.summary.miou:.6f} std={r.summary.std:.6f}"
        )
    print(f"reports under {config.output_root / 'evaluate'}")
    return 0


def _cmd_breaking_point(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    points = harness.run_experiment_b(config)
    for model, pt in points.items():
        where = "None" if pt.bin is None else f"{pt.bin:g}"
        print(f"{model}: breaking point {where}, biggest drop {pt.biggest_drop:.4f}")
    print(f"reports under {config.output_root / 'breaking_point'}")
    return 0


def _cmd_memory_sweep(args: argparse.Namespace) -> int:
    extra = {}
    if args.capacities:
        extra["capacities"] = tuple(int(v) for v in args.capacities.split(","))
    config = _config_from_args(args, **extra)
    table = harness.run_experiment_c(config)
    for cell in table.cells:
        print(
            f"{cell.model} {cell.difficulty} {metrics.fmt_pair(cell.pair)}: "
            f"{round(cell.gain, 3):+.3f}"
        )
    print(f"reports under {config.output_root / 'memory_sweep'}")
    return 0


def _cmd_overlays(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    written = harness.emit_overlays(
        config,
        models=args.models.split(",") if args.models else None,
        difficulties=args.difficulties.split(",") if args.difficulties else None,
        limit=args.limit,
        predictions_root=args.predictions_root,
    )
    print(f"wrote {len(written)} overlay images under {config.output_root / 'overlays'}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    path = harness.write_report(args.output_root, args.output)
    print(f"report written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="viewbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bin-views", help="compute per-instance bin assignments")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--centers", default="0,15,30,45,60,75,90")
    p.add_argument("--tolerance", type=float, default=binning.DEFAULT_TOLERANCE_DEG)
    p.set_defaults(func=_cmd_bin_views)

    p = sub.add_parser("build-subset", help="curate valid instances into a subset")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--centers", default="0,15,30,45,60,75,90")
    p.add_argument("--tolerance", type=float, default=binning.DEFAULT_TOLERANCE_DEG)
    p.add_argument("--no-copy", action="store_true", help="reference originals in place")
    p.add_argument(
        "--size-filter",
        nargs=2,
        type=float,
        metavar=("MIN_GB", "MAX_GB"),
        help="keep only categories whose on-disk size falls in the range",
    )
    p.set_defaults(func=_cmd_build_subset)

    p = sub.add_parser("stats", help="per-class angle-selection statistics")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("build-bank", help="build and snapshot a memory bank")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--feature-root", type=Path, required=True)
    p.add_argument("--bins", required=True, help="comma-separated reference bins")
    p.add_argument("--capacity", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--policy", choices=("uniform", "balanced"), default="uniform")
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=_cmd_build_bank)

    p = sub.add_parser("evaluate", help="experiment A: cross-viewpoint generalization")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("breaking-point", help="experiment B: degradation curves")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_breaking_point)

    p = sub.add_parser("memory-sweep", help="experiment C: memory-size sweep")
    _add_config_flags(p)
    p.add_argument("--capacities", help="comma-separated capacities")
    p.set_defaults(func=_cmd_memory_sweep)

    p = sub.add_parser("overlays", help="qualitative overlays and difference maps")
    _add_config_flags(p)
    p.add_argument("--models")
    p.add_argument("--limit", type=int)
    p.add_argument("--predictions-root", type=Path)
    p.set_defaults(func=_cmd_overlays)

    p = sub.add_parser("report", help="collate result CSVs into one report")
    p.add_argument("--output-root", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
