"""Benchmark harness for viewpoint-robust dense-feature segmentation.

Bins multi-view frames by relative rotation angle, builds a retrieval
memory bank from reference views, predicts segmentation masks for unseen
views via top-k cosine label aggregation, and reports mIoU degradation,
breaking points, and memory-size scaling.
"""

from .binning import (
    BinAssignment,
    BinSpec,
    InstanceValidity,
    SubsetManifest,
    angle_stats,
    assign_bins,
    build_manifest,
    load_manifest,
    save_manifest,
    validate_instance,
)
from .config import DEFAULT_DIFFICULTIES, DifficultySpec, RunConfig, load_config
from .featstore import (
    PatchFeatureMap,
    downsample_mask,
    read_feature_file,
    upsample_distribution,
    write_feature_file,
)
from .membank import MemoryBank, NeighborSet, build_bank, search, shard_bank
from .metrics import (
    BreakingPoint,
    ConfusionAccumulator,
    DegradationCurve,
    IoUReport,
    breaking_point,
    degradation_curve,
    iou_report,
    memory_gains,
)
from .pose import (
    CameraPose,
    Quaternion,
    angular_deviation,
    parse_colmap_images,
    quat_to_rotation,
    relative_rotation,
)
from .segmenter import SegmentationPrediction, aggregate_labels, predict_mask

__version__ = "0.1.0"

__all__ = [
    "BinAssignment",
    "BinSpec",
    "BreakingPoint",
    "CameraPose",
    "ConfusionAccumulator",
    "DEFAULT_DIFFICULTIES",
    "DegradationCurve",
    "DifficultySpec",
    "InstanceValidity",
    "IoUReport",
    "MemoryBank",
    "NeighborSet",
    "PatchFeatureMap",
    "Quaternion",
    "RunConfig",
    "SegmentationPrediction",
    "SubsetManifest",
    "aggregate_labels",
    "angle_stats",
    "angular_deviation",
    "assign_bins",
    "breaking_point",
    "build_bank",
    "build_manifest",
    "degradation_curve",
    "downsample_mask",
    "iou_report",
    "load_config",
    "load_manifest",
    "memory_gains",
    "parse_colmap_images",
    "predict_mask",
    "quat_to_rotation",
    "read_feature_file",
    "relative_rotation",
    "save_manifest",
    "search",
    "shard_bank",
    "upsample_distribution",
    "validate_instance",
    "write_feature_file",
]
