"""End-to-end experiment driver: viewpoint generalization, breaking points,
memory-size sweeps, and qualitative overlay emission.

All outputs are deterministic: iteration follows the config and manifest
order, floats are serialized at fixed precision, and two runs of the same
config produce byte-identical files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import metrics
from .binning import ManifestEntry, SubsetManifest, load_manifest, validate_manifest
from .config import DifficultySpec, RunConfig, difficulty
from .errors import DomainError, PipelineError
from .featstore import (
    PatchFeatureMap,
    feature_relpath,
    read_feature_file,
    read_mask,
    write_feature_file,
    write_mask,
)
from .membank import build_bank, shard_bank
from .metrics import ConfusionAccumulator, IoUReport
from .segmenter import predict_masks

log = logging.getLogger("viewbench")


@dataclass(frozen=True)
class CellResult:
    """Scores of one (model, difficulty, capacity) evaluation cell."""

    model: str
    difficulty: str
    capacity: int
    per_bin: dict[float, IoUReport]
    summary: IoUReport  # merged over validation bins


def _predicted_mask_path(out_root: Path, model: str, difficulty: str, entry: ManifestEntry) -> Path:
    return out_root / "predictions" / model / difficulty / entry.mask


def evaluate_cell(
    manifest: SubsetManifest,
    feature_root: Path,
    spec: DifficultySpec,
    capacity: int,
    config: RunConfig,
    model: str,
    save_masks_to: Path | None = None,
    save_distributions_to: Path | None = None,
) -> CellResult:
    """Score one model at one difficulty and capacity.

    The bank is built from the reference bins; every bin (reference bins
    included, mirroring self-retrieval scoring) is evaluated, and the
    summary merges the validation-bin accumulators.
    """
    bank = build_bank(
        manifest,
        set(spec.reference_bins),
        capacity=capacity,
        seed=config.seed,
        feature_root=feature_root,
    )
    if config.shards > 1:
        bank = shard_bank(bank, min(config.shards, len(bank)))
    # tiny capacities can leave fewer entries than the configured k
    effective_k = min(config.k, len(bank))

    manifest_bins = set(manifest.bin_centers)
    score_bins = sorted(
        (set(spec.reference_bins) | set(spec.validation_bins)) & manifest_bins
    )
    per_bin: dict[float, IoUReport] = {}
    validation_conf = ConfusionAccumulator(manifest.num_classes)
    for bin_deg in score_bins:
        conf = ConfusionAccumulator(manifest.num_classes)
        entries = list(manifest.iter_entries(bins={bin_deg}))
        for lo in range(0, len(entries), config.chunk_size):
            chunk = entries[lo : lo + config.chunk_size]
            queries = [
                read_feature_file(feature_root / feature_relpath(e.image))
                for _, _, e in chunk
            ]
            gts = [read_mask(manifest.mask_path(e)) for _, _, e in chunk]
            predictions = predict_masks(
                queries,
                bank,
                out_shapes=[g.shape for g in gts],
                k=effective_k,
                temperature=config.temperature,
                chunk_size=config.chunk_size,
                upsample_mode=config.upsample_mode,
            )
            for (cat, inst, entry), gt, pred in zip(chunk, gts, predictions):
                conf.update(gt, pred.mask)
                if save_masks_to is not None:
                    out = _predicted_mask_path(save_masks_to, model, spec.name, entry)
                    write_mask(pred.mask, out)
                if save_distributions_to is not None:
                    # per-cell class distributions reuse the feature format
                    out = (
                        save_distributions_to / "distributions" / model / spec.name
                        / feature_relpath(entry.image)
                    )
                    out.parent.mkdir(parents=True, exist_ok=True)
                    write_feature_file(
                        PatchFeatureMap.from_array(
                            pred.patch_dist.astype(np.float32)
                        ),
                        out,
                    )
        per_bin[bin_deg] = metrics.iou_report(conf)
        if bin_deg in spec.validation_bins:
            validation_conf.merge(conf)
    if validation_conf.total == 0:
        raise DomainError(
            f"difficulty {spec.name}: no validation-bin images found in manifest"
        )
    return CellResult(
        model=model,
        difficulty=spec.name,
        capacity=capacity,
        per_bin=per_bin,
        summary=metrics.iou_report(validation_conf),
    )


def _load_inputs(config: RunConfig) -> SubsetManifest:
    manifest = load_manifest(config.manifest)
    validate_manifest(manifest)
    return manifest


def _write_cell_csvs(out_dir: Path, results: list[CellResult]) -> None:
    summary_rows = [
        (r.model, r.difficulty, r.capacity, r.summary.miou, r.summary.std)
        for r in results
    ]
    iou_rows = [
        (r.model, r.difficulty, r.capacity, bin_deg, class_id, value)
        for r in results
        for bin_deg, report in sorted(r.per_bin.items())
        for class_id, value in sorted(report.per_class.items())
    ]
    metrics.write_summary_csv(out_dir / "summary.csv", summary_rows)
    metrics.write_iou_csv(out_dir / "iou.csv", iou_rows)


def run_experiment_a(
    config: RunConfig, capacity: int | None = None, out_name: str = "evaluate"
) -> list[CellResult]:
    """Cross-viewpoint generalization: every (model, difficulty) cell."""
    manifest = _load_inputs(config)
    capacity = capacity if capacity is not None else config.capacity
    out_dir = config.output_root / out_name
    results = []
    for model, feature_root in config.feature_roots.items():
        for spec in config.difficulty_specs():
            log.info("evaluating model=%s difficulty=%s capacity=%d", model, spec.name, capacity)
            results.append(
                evaluate_cell(
                    manifest,
                    feature_root,
                    spec,
                    capacity,
                    config,
                    model,
                    save_masks_to=out_dir if config.save_masks else None,
                    save_distributions_to=out_dir if config.save_distributions else None,
                )
            )
    _write_cell_csvs(out_dir, results)
    return results


def run_experiment_b(config: RunConfig) -> dict[str, metrics.BreakingPoint]:
    """Breaking-point analysis under the Extreme split.

    Each model's per-bin mIoU (0 through 90 degrees) is normalized by the
    0-degree bin; the breaking point is the earliest drop at or beyond the
    threshold.
    """
    manifest = _load_inputs(config)
    spec = difficulty("Extreme")
    out_dir = config.output_root / "breaking_point"

    curves: dict[str, metrics.DegradationCurve] = {}
    points: dict[str, metrics.BreakingPoint] = {}
    for model, feature_root in config.feature_roots.items():
        cell = evaluate_cell(manifest, feature_root, spec, config.capacity, config, model)
        per_bin_miou = {b: r.miou for b, r in cell.per_bin.items()}
        if 0.0 not in per_bin_miou:
            raise DomainError(
                f"model {model}: 0-degree bin missing; cannot normalize the curve"
            )
        curve = metrics.degradation_curve(per_bin_miou)
        curves[model] = curve
        points[model] = metrics.breaking_point(curve)

    curve_rows = []
    for model, curve in curves.items():
        for i, bin_deg in enumerate(curve.bins):
            drop = curve.drops[i - 1] if i > 0 else None
            curve_rows.append((model, bin_deg, curve.miou[i], curve.normalized[i], drop))
    metrics.write_curve_csv(out_dir / "curve.csv", curve_rows)

    metrics.write_csv(
        out_dir / "breaking_points.csv",
        ("model", "breaking_point_bin", "biggest_drop"),
        (
            (
                model,
                "" if pt.bin is None else f"{pt.bin:g}",
                metrics.fmt_float(pt.biggest_drop),
            )
            for model, pt in points.items()
        ),
    )

    # wide plot data, one column per model, raw and normalized variants
    models = list(curves)
    all_bins = sorted({b for c in curves.values() for b in c.bins})
    for name, attr in (("curve_raw.csv", "miou"), ("curve_normalized.csv", "normalized")):
        rows = []
        for b in all_bins:
            row = [f"{b:g}"]
            for model in models:
                curve = curves[model]
                row.append(
                    metrics.fmt_float(getattr(curve, attr)[curve.bins.index(b)])
                    if b in curve.bins
                    else ""
                )
            rows.append(row)
        metrics.write_csv(out_dir / name, ["bin_deg"] + models, rows)
    return points


def run_experiment_c(config: RunConfig) -> metrics.GainTable:
    """Memory-size sweep: experiment A per capacity plus the gain table."""
    if len(set(config.capacities)) < 2:
        raise DomainError("memory sweep needs at least two distinct capacities")
    out_dir = config.output_root / "memory_sweep"
    all_results: list[CellResult] = []
    by_model: dict[str, dict[int, dict[str, float]]] = {}
    for capacity in sorted(set(config.capacities)):
        results = run_experiment_a(
            config, capacity=capacity, out_name=f"memory_sweep/capacity_{capacity}"
        )
        all_results.extend(results)
        for r in results:
            by_model.setdefault(r.model, {}).setdefault(capacity, {})[r.difficulty] = (
                r.summary.miou
            )
    _write_cell_csvs(out_dir, all_results)
    table = metrics.memory_gains(by_model)
    metrics.write_gains_csv(out_dir / "gains.csv", table)
    return table


# ------------------------------------------------------------------ overlays

# difference-map colors: prediction missed the labeled object (gt-only),
# prediction spilled onto true background (pred-only), agreement
_DIFF_GT_ONLY = (220, 50, 47)
_DIFF_PRED_ONLY = (38, 139, 210)
_DIFF_AGREE = (60, 60, 60)

_PALETTE = [
    (0, 0, 0),
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0),
]


def class_color(class_id: int) -> tuple[int, int, int]:
    if class_id < len(_PALETTE):
        return _PALETTE[class_id]
    rng = np.random.default_rng(class_id)
    return tuple(int(v) for v in rng.integers(32, 224, size=3))


def _overlay(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    out = image.astype(np.float64).copy()
    for class_id in np.unique(mask):
        if class_id == 0:
            continue
        color = np.array(class_color(int(class_id)), dtype=np.float64)
        sel = mask == class_id
        out[sel] = (1 - alpha) * out[sel] + alpha * color
    return out.astype(np.uint8)


def difference_map(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Three-color map: every pixel is gt-only, pred-only, or agreement.

    Mismatches where the ground truth carries a non-background label count
    as gt-only; mismatches on true background count as pred-only.
    """
    if gt.shape != pred.shape:
        raise DomainError("ground truth and prediction shapes differ")
    out = np.empty(gt.shape + (3,), dtype=np.uint8)
    agree = gt == pred
    gt_only = (~agree) & (gt != 0)
    pred_only = (~agree) & (gt == 0)
    out[agree] = _DIFF_AGREE
    out[gt_only] = _DIFF_GT_ONLY
    out[pred_only] = _DIFF_PRED_ONLY
    return out


def emit_overlays(
    config: RunConfig,
    models: list[str] | None = None,
    difficulties: list[str] | None = None,
    limit: int | None = None,
    predictions_root: Path | None = None,
) -> list[Path]:
    """Write input / gt-overlay / prediction-overlay / difference images.

    Consumes predicted masks saved by a prior evaluate run; missing
    predictions are skipped with a log entry.
    """
    manifest = _load_inputs(config)
    pred_root = predictions_root or (config.output_root / "evaluate")
    out_dir = config.output_root / "overlays"
    models = models or list(config.feature_roots)
    difficulties = difficulties or list(config.difficulties)
    written: list[Path] = []
    for model in models:
        for difficulty in difficulties:
            count = 0
            for cat, inst, entry in manifest.iter_entries():
                if limit is not None and count >= limit:
                    break
                pred_path = _predicted_mask_path(pred_root, model, difficulty, entry)
                if not pred_path.is_file():
                    log.warning("no prediction for %s at %s; skipping", entry.image, pred_path)
                    continue
                pred = read_mask(pred_path)
                gt = read_mask(manifest.mask_path(entry))
                with Image.open(manifest.image_path(entry)) as img:
                    rgb = np.array(img.convert("RGB"))
                stem = f"{inst.instance_id}_{entry.frame}"
                dest = out_dir / model / difficulty / str(cat.class_number) / f"{entry.center_deg:g}"
                dest.mkdir(parents=True, exist_ok=True)
                outputs = {
                    "input": rgb,
                    "gt": _overlay(rgb, gt),
                    "pred": _overlay(rgb, pred),
                    "diff": difference_map(gt, pred),
                }
                for kind, arr in outputs.items():
                    p = dest / f"{stem}_{kind}.png"
                    Image.fromarray(arr).save(p)
                    written.append(p)
                count += 1
    return written


def write_report(output_root: Path, path: Path | None = None) -> Path:
    """Collate emitted CSVs into a single markdown report."""
    path = path or output_root / "report.md"
    sections = []
    for title, rel in (
        ("Cross-viewpoint generalization", "evaluate/summary.csv"),
        ("Breaking points", "breaking_point/breaking_points.csv"),
        ("Normalized degradation curves", "breaking_point/curve.csv"),
        ("Memory sweep summaries", "memory_sweep/summary.csv"),
        ("Memory gains", "memory_sweep/gains.csv"),
    ):
        f = output_root / rel
        if not f.is_file():
            continue
        lines = f.read_text().strip().splitlines()
        table = ["| " + " | ".join(line.split(",")) + " |" for line in lines]
        if len(table) > 1:
            table.insert(1, "|" + "---|" * len(lines[0].split(",")))
        sections.append(f"## {title}\n\n" + "\n".join(table))
    if not sections:
        raise PipelineError(f"no result CSVs found under {output_root}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("# Viewpoint benchmark report\n\n" + "\n\n".join(sections) + "\n")
    return path
