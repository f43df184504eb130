"""Synthetic multi-view fixtures for tests and desk-scale demo runs.

Generates a raw dataset tree (images, masks, COLMAP reconstructions) whose
frames sit near the default bin centers, plus label-coded patch features:
every cell's feature is the one-hot vector of its own class id scaled by a
per-model constant. Validation features therefore duplicate reference
features exactly, which makes self-retrieval scores exact.
"""

from __future__ import annotations

import math
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .binning import BinSpec, SubsetManifest, build_manifest, save_manifest
from .featstore import (
    PatchFeatureMap,
    downsample_mask,
    feature_relpath,
    read_mask,
    upsample_distribution,
    write_feature_file,
    write_sidecar,
)
from .harness import class_color
from .pose import CameraPose, axis_angle_rotation, format_colmap_images

# per-frame angular jitter around each bin center, well inside the tolerance
_JITTERS = (0.0, 0.4, -0.3, 0.2, -0.6, 1.1, -0.8)
_DISTRACTOR_ANGLE = 130.0


def _pose_at(image_id: int, z_angle_deg: float, name: str) -> CameraPose:
    rotation = axis_angle_rotation((0.0, 0.0, 1.0), math.radians(z_angle_deg))
    return CameraPose(image_id, name, rotation, np.zeros(3))


def _instance_label_grid(
    class_id: int, grid: int, rng: np.random.Generator
) -> np.ndarray:
    # the first row/column stay background so every image carries both labels
    r0 = int(rng.integers(1, 3))
    c0 = int(rng.integers(1, 3))
    r1 = int(rng.integers(grid - 2, grid))
    c1 = int(rng.integers(grid - 2, grid))
    labels = np.zeros((grid, grid), dtype=np.uint8)
    labels[r0 : r1 + 1, c0 : c1 + 1] = class_id
    return labels


def make_raw_dataset(
    root: str | Path,
    n_classes: int = 3,
    instances_per_class: int = 4,
    grid: int = 8,
    block: int = 8,
    seed: int = 42,
) -> None:
    """Write a raw tree of per-instance images, masks and reconstructions."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    size = grid * block
    for class_id in range(1, n_classes + 1):
        for inst in range(instances_per_class):
            inst_dir = root / str(class_id) / f"inst{inst:02d}"
            (inst_dir / "images").mkdir(parents=True, exist_ok=True)
            (inst_dir / "masks").mkdir(parents=True, exist_ok=True)
            (inst_dir / "sparse" / "0").mkdir(parents=True, exist_ok=True)

            labels = _instance_label_grid(class_id, grid, rng)
            # ground truth rendered through the same distribution-upsampling
            # path the segmenter uses, so exact retrieval scores exactly 1.0
            one_hot = np.zeros((grid, grid, n_classes + 1), dtype=np.float64)
            one_hot[np.arange(grid)[:, None], np.arange(grid)[None, :], labels] = 1.0
            mask = upsample_distribution(one_hot, size, size).astype(np.uint8)
            rgb = np.zeros((size, size, 3), dtype=np.uint8)
            tint = rng.integers(96, 160, size=3)
            rgb[mask == 0] = tint
            rgb[mask != 0] = class_color(class_id)

            angles = [c + j for c, j in zip((0, 15, 30, 45, 60, 75, 90), _JITTERS)]
            angles.append(_DISTRACTOR_ANGLE + float(rng.uniform(-2, 2)))
            poses = []
            for i, angle in enumerate(angles, start=1):
                name = f"frame{i:03d}.png"
                poses.append(_pose_at(i, angle, name))
                Image.fromarray(rgb).save(inst_dir / "images" / name)
                Image.fromarray(mask, mode="L").save(inst_dir / "masks" / name)
            (inst_dir / "sparse" / "0" / "images.txt").write_text(
                format_colmap_images(poses)
            )


def write_label_features(
    manifest: SubsetManifest,
    feature_root: str | Path,
    dim: int = 8,
    scale: float = 1.0,
    grid: int = 8,
    corruption: Mapping[float, float] | None = None,
    seed: int = 42,
) -> Path:
    """Emit one-hot label features per curated image, plus the sidecar.

    ``corruption`` optionally maps bin centers to the fraction of object
    cells whose feature is flipped to the background direction, emulating
    a model whose features degrade at those viewpoints.
    """
    feature_root = Path(feature_root)
    sidecar = []
    for _, inst, entry in manifest.iter_entries():
        mask = read_mask(manifest.mask_path(entry))
        labels = downsample_mask(mask, grid, grid)
        if labels.max() >= dim:
            raise ValueError("feature dim too small for the class ids present")
        flat = labels.ravel().copy()
        fraction = (corruption or {}).get(entry.center_deg, 0.0)
        if fraction > 0.0:
            inst_key = zlib.crc32(inst.instance_id.encode())
            rng = np.random.default_rng((seed, inst_key, int(entry.center_deg)))
            object_cells = np.flatnonzero(flat != 0)
            n_flip = int(round(fraction * object_cells.size))
            if n_flip:
                flat[rng.choice(object_cells, size=n_flip, replace=False)] = 0
        feats = np.zeros((grid * grid, dim), dtype=np.float32)
        feats[np.arange(grid * grid), flat] = scale
        rel = feature_relpath(entry.image)
        out = feature_root / rel
        out.parent.mkdir(parents=True, exist_ok=True)
        write_feature_file(
            PatchFeatureMap.from_array(feats.reshape(grid, grid, dim)), out
        )
        sidecar.append((rel, grid, grid, dim, entry.mask))
    feature_root.mkdir(parents=True, exist_ok=True)
    write_sidecar(sidecar, feature_root / "features.tsv")
    return feature_root


def make_fixture(
    workdir: str | Path,
    models: dict[str, float] | None = None,
    n_classes: int = 3,
    instances_per_class: int = 4,
    grid: int = 8,
    block: int = 8,
    dim: int = 8,
    seed: int = 42,
) -> tuple[Path, dict[str, Path]]:
    """Raw tree -> curated subset -> per-model features; returns paths.

    ``models`` maps model names to feature scale factors (scale must not
    change predictions; it exercises query re-normalization).
    """
    workdir = Path(workdir)
    models = models or {"alpha": 1.0, "beta": 2.5}
    raw = workdir / "raw"
    subset = workdir / "subset"
    make_raw_dataset(raw, n_classes, instances_per_class, grid, block, seed)
    manifest, exclusions = build_manifest(raw, BinSpec(), out_root=subset)
    if exclusions:
        raise RuntimeError(f"synthetic fixture should have no exclusions: {exclusions}")
    manifest_path = subset / "manifest.json"
    save_manifest(manifest, manifest_path)
    feature_roots = {}
    for model, scale in models.items():
        feature_roots[model] = write_label_features(
            manifest, workdir / "features" / model, dim=dim, scale=scale, grid=grid
        )
    return manifest_path, feature_roots


def write_config(
    path: str | Path,
    manifest: Path,
    feature_roots: dict[str, Path],
    output_root: Path,
    **options: object,
) -> Path:
    """Write a TOML run config pointing at fixture paths (made absolute)."""
    lines = [
        f'manifest = "{Path(manifest).resolve()}"',
        f'output_root = "{Path(output_root).resolve()}"',
    ]
    for key, value in options.items():
        if isinstance(value, bool):
            lines.append(f"{key} = {str(value).lower()}")
        elif isinstance(value, (int, float)):
            lines.append(f"{key} = {value}")
        elif isinstance(value, (list, tuple)):
            items = ", ".join(
                f'"{v}"' if isinstance(v, str) else str(v) for v in value
            )
            lines.append(f"{key} = [{items}]")
        else:
            lines.append(f'{key} = "{value}"')
    lines.append("")
    lines.append("[feature_roots]")
    for model, root in feature_roots.items():
        lines.append(f'{model} = "{Path(root).resolve()}"')
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
