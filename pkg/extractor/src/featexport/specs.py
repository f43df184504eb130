"""Encoder configurations: patch geometry fixes the export grid."""

from __future__ import annotations

from dataclasses import dataclass

FEATURE_DIM = 768
BATCH_SIZE = 4

# patch size pins the shared evaluation input size
_INPUT_FOR_PATCH = {14: 504, 16: 512}


@dataclass(frozen=True)
class EncoderSpec:
    """One frozen encoder: architecture family plus patch geometry."""

    name: str
    architecture: str
    patch_size: int
    input_size: int
    feature_dim: int = FEATURE_DIM

    def __post_init__(self) -> None:
        expected = _INPUT_FOR_PATCH.get(self.patch_size)
        if expected is None:
            raise ValueError(f"unsupported patch size {self.patch_size}")
        if self.input_size != expected:
            raise ValueError(
                f"patch size {self.patch_size} requires input {expected}, "
                f"got {self.input_size}"
            )

    @property
    def grid(self) -> int:
        return self.input_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid


ENCODERS: dict[str, EncoderSpec] = {
    spec.name: spec
    for spec in (
        EncoderSpec("CLIP", "ViT-B/16", 16, 512),
        EncoderSpec("DINO", "ViT-B/16", 16, 512),
        EncoderSpec("DINOv2", "ViT-B/14", 14, 504),
        EncoderSpec("DINOv3", "ViT-B/16", 16, 512),
        EncoderSpec("C-RADIOv2", "ViT-B/16-CPE", 16, 512),
        EncoderSpec("SigLIP2", "B/16-512", 16, 512),
        EncoderSpec("TIPS", "ViT-B/14-HR", 14, 504),
    )
}

_BY_LOWER = {name.lower(): name for name in ENCODERS}


def encoder_spec(name: str) -> EncoderSpec:
    key = _BY_LOWER.get(name.lower())
    if key is None:
        known = ", ".join(ENCODERS)
        raise KeyError(f"unknown encoder {name!r} (known: {known})")
    return ENCODERS[key]
