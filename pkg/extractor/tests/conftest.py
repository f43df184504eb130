"""Fixtures: a one-image benchmark manifest with a real photo-like image."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw

IMAGE_REL = "images/1/0/inst_1.png"
MASK_REL = "masks/1/0/inst_1.png"


def make_real_image(path: Path, size: int = 512) -> None:
    """Structured RGB image: gradient background, shapes, deterministic noise."""
    rng = np.random.default_rng(7)
    y = np.linspace(40, 215, size, dtype=np.float32)
    x = np.linspace(60, 190, size, dtype=np.float32)
    base = np.stack(
        [
            np.add.outer(y, x) / 2.0,
            np.add.outer(y[::-1], x) / 2.0,
            np.add.outer(y, x[::-1]) / 2.0,
        ],
        axis=2,
    )
    noisy = np.clip(base + rng.normal(0, 12, size=base.shape), 0, 255).astype(np.uint8)
    img = Image.fromarray(noisy)
    draw = ImageDraw.Draw(img)
    draw.ellipse((size // 4, size // 4, 3 * size // 4, 3 * size // 4), fill=(200, 60, 40))
    draw.rectangle((size // 8, size // 2, size // 3, 7 * size // 8), fill=(40, 120, 200))
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def make_mask(path: Path, size: int = 512) -> None:
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[size // 4 : 3 * size // 4, size // 4 : 3 * size // 4] = 1
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask, mode="L").save(path)


@pytest.fixture(scope="session")
def one_image_manifest(tmp_path_factory) -> Path:
    """Manifest JSON with a single (image, mask) pair at the 0-degree bin."""
    root = tmp_path_factory.mktemp("subset")
    make_real_image(root / IMAGE_REL)
    make_mask(root / MASK_REL)
    doc = {
        "bin_centers": [0.0],
        "tolerance_deg": 6.0,
        "categories": [
            {
                "class_number": 1,
                "class_id": 1,
                "class_name": "thing",
                "instances": [
                    {
                        "instance_id": "inst",
                        "bins": [
                            {
                                "center_deg": 0.0,
                                "frame": 1,
                                "theta_deg": 0.0,
                                "error_deg": 0.0,
                                "image": IMAGE_REL,
                                "mask": MASK_REL,
                            }
                        ],
                    }
                ],
            }
        ],
    }
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest
