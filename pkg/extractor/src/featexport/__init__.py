"""Patch-feature export from frozen ViT encoders into the PFV1 format."""

from .backbones import LoadedEncoder, WeightLoadError, load_encoder
from .extract import ExtractReport, extract, feature_relpath, load_manifest_images
from .pfv import write_pfv, write_sidecar
from .specs import BATCH_SIZE, ENCODERS, EncoderSpec, encoder_spec

__version__ = "0.1.0"

__all__ = [
    "BATCH_SIZE",
    "ENCODERS",
    "EncoderSpec",
    "ExtractReport",
    "LoadedEncoder",
    "WeightLoadError",
    "encoder_spec",
    "extract",
    "feature_relpath",
    "load_encoder",
    "load_manifest_images",
    "write_pfv",
    "write_sidecar",
]
