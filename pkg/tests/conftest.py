"""Shared fixtures: synthetic dataset trees and curated benchmark fixtures."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from viewbench.pose import CameraPose, axis_angle_rotation, format_colmap_images
from viewbench.synthetic import make_fixture


def write_instance_tree(
    instance_dir: Path,
    z_angles_deg: list[float],
    image_size: int = 16,
    mask_value: int = 1,
    skip_masks: bool = False,
) -> None:
    """Minimal raw instance: frames at given absolute z-rotations."""
    (instance_dir / "images").mkdir(parents=True, exist_ok=True)
    (instance_dir / "masks").mkdir(parents=True, exist_ok=True)
    (instance_dir / "sparse" / "0").mkdir(parents=True, exist_ok=True)
    poses = []
    rgb = np.full((image_size, image_size, 3), 128, dtype=np.uint8)
    mask = np.zeros((image_size, image_size), dtype=np.uint8)
    mask[image_size // 4 : -image_size // 4, image_size // 4 : -image_size // 4] = mask_value
    for i, angle in enumerate(z_angles_deg, start=1):
        name = f"frame{i:03d}.png"
        rotation = axis_angle_rotation((0, 0, 1), math.radians(angle))
        poses.append(CameraPose(i, name, rotation, np.zeros(3)))
        Image.fromarray(rgb).save(instance_dir / "images" / name)
        if not skip_masks:
            Image.fromarray(mask, mode="L").save(instance_dir / "masks" / name)
    (instance_dir / "sparse" / "0" / "images.txt").write_text(
        format_colmap_images(poses)
    )


# angles that fill all seven default bins within tolerance
GOOD_ANGLES = [0.0, 14.8, 30.3, 44.6, 60.2, 75.5, 89.7, 130.0]
# angles missing the 90-degree bin
BAD_ANGLES = [0.0, 14.8, 30.3, 44.6, 60.2, 75.5]


@pytest.fixture(scope="session")
def synthetic_fixture(tmp_path_factory) -> tuple[Path, dict[str, Path]]:
    """Curated synthetic benchmark: 3 classes x 4 instances x 7 bins."""
    workdir = tmp_path_factory.mktemp("synthetic")
    return make_fixture(workdir, models={"alpha": 1.0, "beta": 2.5})


@pytest.fixture(scope="session")
def single_model_fixture(tmp_path_factory) -> tuple[Path, dict[str, Path]]:
    workdir = tmp_path_factory.mktemp("synthetic_single")
    return make_fixture(workdir, models={"alpha": 1.0})


def pytest_runtest_logreport(report):
    # one visible PASS/FAIL line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {status}", flush=True)
