"""Retrieval-based segmentation: neighbor labels to class distributions to masks.

Retrieved neighbor similarities are turned into soft weights with a
temperature softmax; weights of neighbors sharing a label add up to the
per-cell class distribution, which is then upsampled to pixel resolution
and argmaxed into a predicted mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .featstore import PatchFeatureMap, upsample_distribution
from .membank import DEFAULT_K, MemoryBank, NeighborSet, search

DEFAULT_TEMPERATURE = 0.02


@dataclass(frozen=True)
class SegmentationPrediction:
    """Per-patch class distributions plus the full-resolution mask."""

    patch_dist: np.ndarray  # (grid_h, grid_w, num_classes)
    mask: np.ndarray  # (out_h, out_w) class ids


def _soft_weights(similarities: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    z = similarities / temperature
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def _aggregate_batch(
    similarities: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    temperature: float,
) -> np.ndarray:
    """(N, k) similarities and labels -> (N, num_classes) distributions."""
    weights = _soft_weights(similarities, temperature)
    n = weights.shape[0]
    probs = np.zeros((n, num_classes), dtype=np.float64)
    rows = np.repeat(np.arange(n), weights.shape[1])
    np.add.at(probs, (rows, labels.ravel()), weights.ravel())
    return probs


def aggregate_labels(
    similarities: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    num_classes: int,
    temperature: float = DEFAULT_TEMPERATURE,
) -> np.ndarray:
    """Distribution over classes from one cell's retrieved neighbors.

    Weights are softmax(similarity / temperature) with max-subtraction;
    each class accumulates the weights of its neighbors.
    """
    sims = np.asarray(similarities, dtype=np.float64).reshape(1, -1)
    labs = np.asarray(labels, dtype=np.int64).reshape(1, -1)
    if sims.shape[1] < 1:
        raise DomainError("aggregation needs at least one neighbor")
    if sims.shape != labs.shape:
        raise DomainError("similarities and labels must align")
    if labs.min() < 0 or labs.max() >= num_classes:
        raise DomainError("neighbor labels must lie in [0, num_classes)")
    return _aggregate_batch(sims, labs, num_classes, temperature)[0]


def distributions_from_neighbors(
    neighbors: NeighborSet,
    bank: MemoryBank,
    temperature: float,
) -> np.ndarray:
    """Per-query class distributions from a batched search result."""
    labels = bank.labels[neighbors.indices]
    return _aggregate_batch(
        neighbors.similarities, labels, bank.num_classes, temperature
    )


def predict_mask(
    query: PatchFeatureMap,
    bank: MemoryBank,
    k: int = DEFAULT_K,
    temperature: float = DEFAULT_TEMPERATURE,
    out_h: int | None = None,
    out_w: int | None = None,
    upsample_mode: str = "bilinear",
) -> SegmentationPrediction:
    """Segment one query image against the memory bank.

    Every patch cell is searched, aggregated into a class distribution,
    and the distribution grid is upsampled to (out_h, out_w) and argmaxed.
    Output defaults to the patch grid size.
    """
    if bank.dim != query.dim:
        raise DomainError(f"bank dim {bank.dim} != query dim {query.dim}")
    out_h = out_h if out_h is not None else query.grid_h
    out_w = out_w if out_w is not None else query.grid_w
    neighbors = search(bank, query.cells(), k)
    dist = distributions_from_neighbors(neighbors, bank, temperature)
    grid = dist.reshape(query.grid_h, query.grid_w, bank.num_classes)
    mask = upsample_distribution(grid, out_h, out_w, mode=upsample_mode)
    return SegmentationPrediction(patch_dist=grid, mask=mask)


def predict_masks(
    queries: Sequence[PatchFeatureMap],
    bank: MemoryBank,
    out_shapes: Sequence[tuple[int, int]],
    k: int = DEFAULT_K,
    temperature: float = DEFAULT_TEMPERATURE,
    chunk_size: int = 4,
    upsample_mode: str = "bilinear",
) -> list[SegmentationPrediction]:
    """Batch prediction over query images, searched in chunks.

    The chunk size only groups cells into search calls; results are
    bit-identical for any chunking.
    """
    if len(queries) != len(out_shapes):
        raise DomainError("queries and out_shapes must align")
    if chunk_size < 1:
        raise DomainError("chunk_size must be positive")
    predictions: list[SegmentationPrediction] = []
    for lo in range(0, len(queries), chunk_size):
        chunk = queries[lo : lo + chunk_size]
        cells = np.concatenate([q.cells() for q in chunk], axis=0)
        neighbors = search(bank, cells, k)
        dist = distributions_from_neighbors(neighbors, bank, temperature)
        offset = 0
        for q, (oh, ow) in zip(chunk, out_shapes[lo : lo + chunk_size]):
            n_cells = q.grid_h * q.grid_w
            grid = dist[offset : offset + n_cells].reshape(
                q.grid_h, q.grid_w, bank.num_classes
            )
            offset += n_cells
            mask = upsample_distribution(grid, oh, ow, mode=upsample_mode)
            predictions.append(SegmentationPrediction(patch_dist=grid, mask=mask))
    return predictions
