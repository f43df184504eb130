"""Manifest-driven patch-feature export into the PFV1 tree."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbones import LoadedEncoder, load_encoder
from .pfv import write_pfv, write_sidecar
from .specs import BATCH_SIZE, EncoderSpec

log = logging.getLogger("featexport")


@dataclass(frozen=True)
class ManifestImage:
    image: str  # relative to the manifest directory
    mask: str


@dataclass
class ExtractReport:
    written: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def load_manifest_images(manifest_path: str | Path) -> list[ManifestImage]:
    """Image/mask pairs from a benchmark manifest, in manifest order."""
    doc = json.loads(Path(manifest_path).read_text())
    images = []
    for cat in doc["categories"]:
        for inst in cat["instances"]:
            for entry in inst["bins"]:
                images.append(ManifestImage(entry["image"], entry["mask"]))
    return images


def feature_relpath(image_relpath: str) -> str:
    return str(Path(image_relpath).with_suffix(".pfv").as_posix())


def _load_pixels(path: Path, encoder: LoadedEncoder, device: str) -> torch.Tensor:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize(
            (encoder.spec.input_size, encoder.spec.input_size), Image.BICUBIC
        )
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.array(encoder.mean, dtype=np.float32)) / np.array(
        encoder.std, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0).to(device)


def _patch_grid(tokens: torch.Tensor, spec: EncoderSpec) -> np.ndarray:
    """Drop leading non-patch tokens and reshape to (grid, grid, dim)."""
    seq_len, dim = tokens.shape
    if dim != spec.feature_dim:
        raise ValueError(f"encoder emitted dim {dim}, expected {spec.feature_dim}")
    specials = seq_len - spec.num_patches
    if not 0 <= specials <= 8:
        raise ValueError(
            f"token count {seq_len} does not fit a {spec.grid}x{spec.grid} grid"
        )
    patches = tokens[specials:]
    return (
        patches.reshape(spec.grid, spec.grid, spec.feature_dim)
        .cpu()
        .numpy()
        .astype(np.float32)
    )


def extract(
    manifest_path: str | Path,
    spec: EncoderSpec,
    out_root: str | Path,
    device: str = "cpu",
    pretrained: bool = True,
    seed: int = 42,
    batch_size: int = BATCH_SIZE,
) -> ExtractReport:
    """Export every manifest image's patch features under ``out_root``.

    Images are processed in chunks of ``batch_size``; failures on single
    images are logged and collected rather than aborting the run.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out_root = Path(out_root)
    encoder = load_encoder(spec, pretrained=pretrained, seed=seed, device=device)
    images = load_manifest_images(manifest_path)
    report = ExtractReport()
    sidecar: list[tuple[str, int, int, int, str]] = []

    for lo in range(0, len(images), batch_size):
        chunk = images[lo : lo + batch_size]
        pixels = []
        loaded: list[ManifestImage] = []
        for item in chunk:
            try:
                pixels.append(_load_pixels(base / item.image, encoder, device))
            except OSError as exc:
                log.error("cannot read %s: %s", item.image, exc)
                report.failures.append((item.image, str(exc)))
                continue
            loaded.append(item)
        if not loaded:
            continue
        tokens = encoder.forward_tokens(torch.cat(pixels, dim=0))
        for item, seq in zip(loaded, tokens):
            rel = feature_relpath(item.image)
            try:
                grid = _patch_grid(seq, spec)
                write_pfv(grid, out_root / rel)
            except (ValueError, OSError) as exc:
                log.error("cannot write %s: %s", rel, exc)
                report.failures.append((item.image, str(exc)))
                continue
            report.written.append(rel)
            sidecar.append((rel, spec.grid, spec.grid, spec.feature_dim, item.mask))

    out_root.mkdir(parents=True, exist_ok=True)
    write_sidecar(sidecar, out_root / "features.tsv")
    return report
