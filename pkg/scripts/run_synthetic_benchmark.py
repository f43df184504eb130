#!/usr/bin/env python3
"""Run the full benchmark (experiments A, B, C plus overlays and report)
on a freshly generated synthetic fixture.

Usage: python scripts/run_synthetic_benchmark.py [workdir]
"""

import sys
from pathlib import Path

from viewbench import harness
from viewbench.config import load_config
from viewbench.synthetic import make_fixture, write_config


def main() -> int:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("fixture")
    manifest_path, feature_roots = make_fixture(workdir)
    config_path = write_config(
        workdir / "run.toml",
        manifest_path,
        feature_roots,
        workdir / "out",
        capacity=100000,
        capacities=(64, 100000),
        save_masks=True,
    )
    config = load_config(config_path)

    results = harness.run_experiment_a(config)
    for r in results:
        print(
            f"A | {r.model:<6} {r.difficulty:<8} capacity={r.capacity}: "
            f"miou={r.summary.miou:.6f} std={r.summary.std:.6f}"
        )

    points = harness.run_experiment_b(config)
    for model, pt in points.items():
        where = "None" if pt.bin is None else f"{pt.bin:g} deg"
        print(f"B | {model:<6} breaking point: {where} (biggest drop {pt.biggest_drop:+.4f})")

    table = harness.run_experiment_c(config)
    for cell in table.cells:
        print(
            f"C | {cell.model:<6} {cell.difficulty:<8} "
            f"{cell.pair[0]}->{cell.pair[1]}: {round(cell.gain, 3):+.3f}"
        )

    written = harness.emit_overlays(config, limit=2)
    print(f"overlays: {len(written)} images")
    report = harness.write_report(config.output_root)
    print(f"report: {report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
