#!/usr/bin/env python3
"""Generate the synthetic multi-view fixture and a ready-to-run config.

Usage: python scripts/make_synthetic_fixture.py [workdir]
"""

import sys
from pathlib import Path

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
    print(f"manifest: {manifest_path}")
    for model, root in feature_roots.items():
        print(f"features[{model}]: {root}")
    print(f"config: {config_path}")
    print(f"next: viewbench evaluate --config {config_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
