"""Segmentation metrics: IoU, degradation curves, breaking points, memory gains.

Confusion accumulators are mergeable integer monoids, so parallel partial
accumulation followed by merging equals serial accumulation exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError

BREAKING_POINT_THRESHOLD = -0.1


class ConfusionAccumulator:
    """C x C pixel counts indexed by (ground-truth class, predicted class)."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise DomainError("num_classes must be positive")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, gt: np.ndarray, pred: np.ndarray) -> "ConfusionAccumulator":
        gt = np.asarray(gt)
        pred = np.asarray(pred)
        if gt.shape != pred.shape:
            raise DomainError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
        g = gt.ravel().astype(np.int64)
        p = pred.ravel().astype(np.int64)
        if g.size == 0:
            return self
        c = self.num_classes
        if g.min() < 0 or g.max() >= c or p.min() < 0 or p.max() >= c:
            raise DomainError(f"class ids must lie in [0, {c})")
        self.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise DomainError("cannot merge accumulators of different class counts")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class IoUReport:
    """Per-class IoU (absent classes excluded), mean, and dispersion."""

    per_class: dict[int, float]
    miou: float
    std: float


def iou_report(confusion: ConfusionAccumulator) -> IoUReport:
    """Jaccard index per class; classes with zero union are absent.

    The mean and population std run over present classes only.
    """
    if confusion.total == 0:
        raise DomainError("cannot report IoU from an empty confusion accumulator")
    counts = confusion.counts
    tp = np.diag(counts).astype(np.float64)
    fn = counts.sum(axis=1) - np.diag(counts)  # gt rows
    fp = counts.sum(axis=0) - np.diag(counts)  # pred cols
    union = tp + fp + fn
    present = union > 0
    ious = {int(c): float(tp[c] / union[c]) for c in np.flatnonzero(present)}
    values = np.array(list(ious.values()))
    return IoUReport(
        per_class=ious,
        miou=float(values.mean()),
        std=float(values.std()),
    )


@dataclass(frozen=True)
class DegradationCurve:
    """Per-bin mIoU with 0-degree-normalized values and successive drops."""

    bins: tuple[float, ...]
    miou: tuple[float, ...]
    normalized: tuple[float, ...]
    drops: tuple[float, ...]  # drops[i] pairs with bins[i + 1]


@dataclass(frozen=True)
class BreakingPoint:
    bin: float | None
    biggest_drop: float


def degradation_curve(per_bin_miou: Mapping[float, float]) -> DegradationCurve:
    """Normalize a bin->mIoU map by its 0-degree bin and difference it."""
    by_bin = {float(b): float(m) for b, m in per_bin_miou.items()}
    bins = tuple(sorted(by_bin))
    if 0.0 not in by_bin:
        raise DomainError("degradation curve requires the 0-degree bin")
    m0 = by_bin[0.0]
    if m0 <= 0.0:
        raise DomainError("0-degree mIoU must be positive to normalize")
    miou = tuple(by_bin[b] for b in bins)
    normalized = tuple(m / m0 for m in miou)
    drops = tuple(normalized[i] - normalized[i - 1] for i in range(1, len(bins)))
    return DegradationCurve(bins, miou, normalized, drops)


def breaking_point(
    curve: DegradationCurve, threshold: float = BREAKING_POINT_THRESHOLD
) -> BreakingPoint:
    """Earliest bin whose drop from the previous bin is <= threshold."""
    bin_at = None
    for i, drop in enumerate(curve.drops):
        if drop <= threshold:
            bin_at = curve.bins[i + 1]
            break
    biggest = min(curve.drops) if curve.drops else 0.0
    return BreakingPoint(bin=bin_at, biggest_drop=biggest)


@dataclass(frozen=True)
class GainCell:
    model: str
    difficulty: str
    pair: tuple[int, int]
    gain: float  # full precision; round to 3 decimals for reporting


@dataclass(frozen=True)
class GainTable:
    """Absolute mIoU changes between memory capacities, plus averages."""

    pairs: tuple[tuple[int, int], ...]
    cells: tuple[GainCell, ...]
    per_task_averages: dict[tuple[str, tuple[int, int]], float]
    per_model_averages: dict[tuple[str, tuple[int, int]], float]


def capacity_pairs(capacities: Sequence[int]) -> tuple[tuple[int, int], ...]:
    caps = sorted(set(capacities))
    if len(caps) < 2:
        raise DomainError("memory gains need at least two capacities")
    pairs = [(caps[i], caps[i + 1]) for i in range(len(caps) - 1)]
    if len(caps) > 2:
        pairs.append((caps[0], caps[-1]))
    return tuple(pairs)


def memory_gains(
    results: Mapping[str, Mapping[int, Mapping[str, float]]]
) -> GainTable:
    """Per model/difficulty mIoU differences across capacity pairs.

    ``results`` maps model -> capacity -> difficulty -> mIoU. Missing cells
    stay absent and are excluded from the per-task (difficulty) and
    per-model averages.
    """
    all_caps = sorted({c for caps in results.values() for c in caps})
    pairs = capacity_pairs(all_caps)

    difficulties: list[str] = []
    for caps in results.values():
        for diffs in caps.values():
            for d in diffs:
                if d not in difficulties:
                    difficulties.append(d)

    cells: list[GainCell] = []
    for model, caps in results.items():
        for difficulty in difficulties:
            for lo, hi in pairs:
                if (
                    lo in caps
                    and hi in caps
                    and difficulty in caps[lo]
                    and difficulty in caps[hi]
                ):
                    gain = caps[hi][difficulty] - caps[lo][difficulty]
                    cells.append(GainCell(model, difficulty, (lo, hi), gain))

    per_task: dict[tuple[str, tuple[int, int]], float] = {}
    for difficulty in difficulties:
        for pair in pairs:
            vals = [c.gain for c in cells if c.difficulty == difficulty and c.pair == pair]
            if vals:
                per_task[(difficulty, pair)] = sum(vals) / len(vals)
    per_model: dict[tuple[str, tuple[int, int]], float] = {}
    for model in results:
        for pair in pairs:
            vals = [c.gain for c in cells if c.model == model and c.pair == pair]
            if vals:
                per_model[(model, pair)] = sum(vals) / len(vals)
    return GainTable(pairs, tuple(cells), per_task, per_model)


# ---------------------------------------------------------------- CSV output

def fmt_float(x: float) -> str:
    return f"{x:.6f}"


def fmt_capacity(capacity: int) -> str:
    return f"{capacity // 1000}k" if capacity % 1000 == 0 else str(capacity)


def fmt_pair(pair: tuple[int, int]) -> str:
    return f"{fmt_capacity(pair[0])}->{fmt_capacity(pair[1])}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def write_iou_csv(
    path: str | Path,
    rows: Iterable[tuple[str, str, int, float, int, float]],
) -> None:
    """Rows of (model, difficulty, capacity, bin_deg, class_id, iou)."""
    write_csv(
        path,
        ("model", "difficulty", "capacity", "bin_deg", "class_id", "iou"),
        (
            (m, d, fmt_capacity(c), f"{b:g}", str(cls), fmt_float(v))
            for m, d, c, b, cls, v in rows
        ),
    )


def write_summary_csv(
    path: str | Path,
    rows: Iterable[tuple[str, str, int, float, float]],
) -> None:
    """Rows of (model, difficulty, capacity, miou, std)."""
    write_csv(
        path,
        ("model", "difficulty", "capacity", "miou", "std"),
        (
            (m, d, fmt_capacity(c), fmt_float(miou), fmt_float(std))
            for m, d, c, miou, std in rows
        ),
    )


def write_curve_csv(
    path: str | Path,
    rows: Iterable[tuple[str, float, float, float, float | None]],
) -> None:
    """Rows of (model, bin_deg, miou, normalized, drop); no drop at the first bin."""
    write_csv(
        path,
        ("model", "bin_deg", "miou", "normalized", "drop"),
        (
            (m, f"{b:g}", fmt_float(v), fmt_float(nv), "" if drop is None else fmt_float(drop))
            for m, b, v, nv, drop in rows
        ),
    )


def write_gains_csv(path: str | Path, table: GainTable) -> None:
    """Gain cells plus 'average' rows per difficulty and per model.

    Gains are rounded to 3 decimals for reporting.
    """
    rows: list[tuple[str, str, str, str]] = []
    for cell in table.cells:
        rows.append(
            (cell.model, cell.difficulty, fmt_pair(cell.pair), fmt_float(round(cell.gain, 3)))
        )
    for (difficulty, pair), gain in table.per_task_averages.items():
        rows.append(("average", difficulty, fmt_pair(pair), fmt_float(round(gain, 3))))
    for (model, pair), gain in table.per_model_averages.items():
        rows.append((model, "average", fmt_pair(pair), fmt_float(round(gain, 3))))
    write_csv(path, ("model", "difficulty", "pair", "gain"), rows)
