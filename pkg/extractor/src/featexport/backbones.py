"""Frozen encoder loading: pretrained checkpoints or seeded random init.

The random-init path builds the matching ViT geometry from a config, for
environments without weight downloads; outputs are deterministic for a
fixed seed. The pretrained path names public checkpoints and fails with a
clear error when they cannot be fetched.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass

import torch

from .specs import EncoderSpec

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
HALF_MEAN = (0.5, 0.5, 0.5)
HALF_STD = (0.5, 0.5, 0.5)

PRETRAINED_IDS = {
    "CLIP": "openai/clip-vit-base-patch16",
    "DINO": "facebook/dino-vitb16",
    "DINOv2": "facebook/dinov2-base",
    "DINOv3": "facebook/dinov3-vitb16-pretrain-lvd1689m",
    "SigLIP2": "google/siglip2-base-patch16-512",
}

# native pre-training resolutions; positional embeddings are resized
# bicubically when the evaluation grid is larger
_NATIVE_IMAGE_SIZE = {
    "CLIP": 224,
    "DINO": 224,
    "DINOv2": 518,
    "DINOv3": 224,
    "C-RADIOv2": 224,
    "SigLIP2": 512,
    "TIPS": 448,
}

_NORMALIZATION = {
    "CLIP": (CLIP_MEAN, CLIP_STD),
    "DINO": (IMAGENET_MEAN, IMAGENET_STD),
    "DINOv2": (IMAGENET_MEAN, IMAGENET_STD),
    "DINOv3": (IMAGENET_MEAN, IMAGENET_STD),
    "C-RADIOv2": ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
    "SigLIP2": (HALF_MEAN, HALF_STD),
    "TIPS": (HALF_MEAN, HALF_STD),
}


class WeightLoadError(RuntimeError):
    """Pretrained weights could not be obtained."""


@dataclass
class LoadedEncoder:
    model: torch.nn.Module
    spec: EncoderSpec
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    takes_interpolate_flag: bool

    def forward_tokens(self, pixels: torch.Tensor) -> torch.Tensor:
        """Last-layer token sequence for a normalized image batch."""
        with torch.no_grad():
            if self.takes_interpolate_flag:
                out = self.model(pixels, interpolate_pos_encoding=True)
            else:
                out = self.model(pixels)
        return out.last_hidden_state


def _random_init_model(spec: EncoderSpec, seed: int) -> torch.nn.Module:
    import transformers

    native = _NATIVE_IMAGE_SIZE[spec.name]
    torch.manual_seed(seed)
    if spec.name == "CLIP":
        cfg = transformers.CLIPVisionConfig(
            hidden_size=spec.feature_dim, patch_size=spec.patch_size,
            image_size=native, intermediate_size=4 * spec.feature_dim,
        )
        return transformers.CLIPVisionModel(cfg)
    if spec.name == "DINOv2":
        cfg = transformers.Dinov2Config(
            hidden_size=spec.feature_dim, patch_size=spec.patch_size, image_size=native
        )
        return transformers.Dinov2Model(cfg)
    if spec.name == "DINOv3":
        cfg = transformers.DINOv3ViTConfig(
            hidden_size=spec.feature_dim, patch_size=spec.patch_size, image_size=native
        )
        return transformers.DINOv3ViTModel(cfg)
    if spec.name == "SigLIP2":
        cfg = transformers.SiglipVisionConfig(
            hidden_size=spec.feature_dim, patch_size=spec.patch_size,
            image_size=native, intermediate_size=4 * spec.feature_dim,
        )
        return transformers.SiglipVisionModel(cfg)
    # DINO, TIPS and the C-RADIOv2 fallback share plain ViT geometry
    # (the CPE variant of C-RADIOv2 is not replicated here)
    cfg = transformers.ViTConfig(
        hidden_size=spec.feature_dim, patch_size=spec.patch_size, image_size=native
    )
    return transformers.ViTModel(cfg)


def _pretrained_model(spec: EncoderSpec) -> torch.nn.Module:
    import transformers

    if spec.name == "C-RADIOv2":
        try:
            return torch.hub.load("NVlabs/RADIO", "radio_model", version="radio_v2.5-b")
        except Exception as exc:
            raise WeightLoadError(f"C-RADIOv2 torch.hub load failed: {exc}") from exc
    if spec.name == "TIPS":
        raise WeightLoadError(
            "TIPS publishes repository checkpoints only; export with "
            "--random-init or adapt the loader to a local checkpoint"
        )
    loaders = {
        "CLIP": transformers.CLIPVisionModel,
        "DINO": transformers.ViTModel,
        "DINOv2": transformers.Dinov2Model,
        "DINOv3": transformers.DINOv3ViTModel,
        "SigLIP2": transformers.SiglipVisionModel,
    }
    hub_id = PRETRAINED_IDS[spec.name]
    try:
        return loaders[spec.name].from_pretrained(hub_id)
    except Exception as exc:
        raise WeightLoadError(f"{spec.name}: cannot load {hub_id}: {exc}") from exc


def load_encoder(
    spec: EncoderSpec,
    pretrained: bool = True,
    seed: int = 42,
    device: str = "cpu",
) -> LoadedEncoder:
    model = _pretrained_model(spec) if pretrained else _random_init_model(spec, seed)
    model.eval()
    model.to(device)
    for p in model.parameters():
        p.requires_grad_(False)
    takes_flag = "interpolate_pos_encoding" in inspect.signature(model.forward).parameters
    mean, std = _NORMALIZATION[spec.name]
    return LoadedEncoder(model, spec, mean, std, takes_flag)
