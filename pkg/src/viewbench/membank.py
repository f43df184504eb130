"""Capacity-bounded memory bank of (patch feature, label) entries.

Search is exact top-k cosine similarity (dot product of unit vectors).
Similarities are evaluated with a non-BLAS float64 einsum kernel so each
(query, entry) pair yields bit-identical values regardless of shard layout
or query chunking; sharded search is therefore exactly equal to the
single-shard brute force, including tie handling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .binning import SubsetManifest
from .errors import DomainError, EmptyBankError, FormatError, StructuralError
from .featstore import downsample_mask, feature_relpath, read_feature_file, read_mask

DEFAULT_SEED = 42
DEFAULT_K = 30

BANK_MAGIC = b"MBK1"

# provenance of one entry: (instance_id, bin center, flat cell index)
Source = tuple[str, float, int]


@dataclass(frozen=True)
class MemoryBank:
    """Immutable store of unit-normalized features with class labels."""

    features: np.ndarray  # (N, D) float64, rows unit-norm
    labels: np.ndarray  # (N,) int64
    sources: tuple[Source, ...]
    capacity: int
    num_classes: int
    shard_bounds: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if n > self.capacity:
            raise DomainError(f"bank holds {n} entries, capacity {self.capacity}")
        if self.labels.shape != (n,):
            raise DomainError("labels must align with features")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError("labels must lie in [0, num_classes)")
        prev = 0
        for start, end in self.shard_bounds:
            if start != prev or end <= start:
                raise DomainError("shards must partition entries contiguously")
            prev = end
        if prev != n:
            raise DomainError("shards must cover all entries")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class NeighborSet:
    """Top-k neighbors for a batch of queries, similarity-descending.

    Ties are broken by ascending entry index. ``indices`` and
    ``similarities`` are (num_queries, k) arrays.
    """

    indices: np.ndarray
    similarities: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def _normalize_rows(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    finite = np.isfinite(arr).all(axis=1)
    if not finite.all():
        raise DomainError(f"{what} {int(np.flatnonzero(~finite)[0])} is not finite")
    norms = np.linalg.norm(arr, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DomainError(f"{what} {int(bad[0])} has zero norm")
    return arr / norms[:, None]


def bank_from_entries(
    features: np.ndarray,
    labels: Sequence[int] | np.ndarray,
    capacity: int,
    num_classes: int,
    seed: int = DEFAULT_SEED,
    sources: Sequence[Source] | None = None,
    sample_policy: str = "uniform",
) -> MemoryBank:
    """Assemble a bank from candidate entries, subsampling over capacity.

    Subsampling is uniform without replacement (seeded, deterministic);
    the class-balanced policy instead splits the capacity evenly across
    the labels present, redistributing shares smaller classes cannot fill.
    """
    if capacity <= 0:
        raise DomainError("capacity must be positive")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise DomainError("features must be a (N, D) array")
    n = feats.shape[0]
    if n == 0:
        raise EmptyBankError("no candidate entries for the memory bank")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.shape != (n,):
        raise DomainError("labels must align with features")
    src = tuple(sources) if sources is not None else tuple(("", 0.0, i) for i in range(n))
    if len(src) != n:
        raise DomainError("sources must align with features")

    if n > capacity:
        if sample_policy == "uniform":
            rng = np.random.default_rng(seed)
            keep = np.sort(rng.choice(n, size=capacity, replace=False))
        elif sample_policy == "balanced":
            keep = _balanced_sample(labels_arr, capacity, seed)
        else:
            raise DomainError(f"unknown sample policy {sample_policy!r}")
        feats = feats[keep]
        labels_arr = labels_arr[keep]
        src = tuple(src[i] for i in keep)

    feats = _normalize_rows(feats, "bank entry")
    return MemoryBank(
        features=feats,
        labels=labels_arr,
        sources=src,
        capacity=capacity,
        num_classes=num_classes,
        shard_bounds=((0, feats.shape[0]),),
    )


def _balanced_sample(labels: np.ndarray, capacity: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    pools = {int(c): np.flatnonzero(labels == c) for c in classes}
    quota = {int(c): 0 for c in classes}
    remaining = capacity
    open_classes = sorted(pools)
    while remaining > 0 and open_classes:
        share = max(1, remaining // len(open_classes))
        progressed = False
        for c in list(open_classes):
            room = len(pools[c]) - quota[c]
            take = min(share, room, remaining)
            if take > 0:
                quota[c] += take
                remaining -= take
                progressed = True
            if quota[c] == len(pools[c]):
                open_classes.remove(c)
            if remaining == 0:
                break
        if not progressed:
            break
    keep: list[np.ndarray] = []
    for c in sorted(pools):
        if quota[c] == len(pools[c]):
            keep.append(pools[c])
        elif quota[c] > 0:
            keep.append(np.sort(rng.choice(pools[c], size=quota[c], replace=False)))
    return np.sort(np.concatenate(keep)) if keep else np.empty(0, dtype=np.int64)


def build_bank(
    manifest: SubsetManifest,
    reference_bins: set[float],
    capacity: int,
    seed: int = DEFAULT_SEED,
    feature_root: str | Path = ".",
    sample_policy: str = "uniform",
) -> MemoryBank:
    """Collect every patch of every reference-bin image into a bank.

    Feature files mirror the manifest's image paths under ``feature_root``
    with the .pfv suffix; labels come from the paired mask downsampled to
    the feature grid.
    """
    manifest_bins = set(manifest.bin_centers)
    stray = set(reference_bins) - manifest_bins
    if stray:
        raise DomainError(f"reference bins {sorted(stray)} not in manifest bins")
    feature_root = Path(feature_root)
    feats_parts: list[np.ndarray] = []
    labels_parts: list[np.ndarray] = []
    sources: list[Source] = []
    dim: int | None = None
    for _, inst, entry in manifest.iter_entries(bins=set(reference_bins)):
        fmap = read_feature_file(feature_root / feature_relpath(entry.image))
        if dim is None:
            dim = fmap.dim
        elif fmap.dim != dim:
            raise StructuralError(
                f"feature dim mismatch: {fmap.dim} != {dim} for {entry.image}"
            )
        mask = read_mask(manifest.mask_path(entry))
        grid = downsample_mask(mask, fmap.grid_h, fmap.grid_w)
        feats_parts.append(fmap.cells())
        labels_parts.append(grid.ravel())
        sources.extend(
            (inst.instance_id, entry.center_deg, cell)
            for cell in range(fmap.grid_h * fmap.grid_w)
        )
    if not feats_parts:
        raise EmptyBankError("reference bins contribute no patch entries")
    return bank_from_entries(
        np.concatenate(feats_parts, axis=0),
        np.concatenate(labels_parts),
        capacity=capacity,
        num_classes=manifest.num_classes,
        seed=seed,
        sources=sources,
        sample_policy=sample_policy,
    )


def shard_bank(bank: MemoryBank, n_shards: int) -> MemoryBank:
    """Partition entries into contiguous shards; search results unchanged."""
    n = len(bank)
    if not 1 <= n_shards <= n:
        raise DomainError(f"n_shards must be in [1, {n}], got {n_shards}")
    base, extra = divmod(n, n_shards)
    bounds = []
    start = 0
    for i in range(n_shards):
        end = start + base + (1 if i < extra else 0)
        bounds.append((start, end))
        start = end
    return replace(bank, shard_bounds=tuple(bounds))


def _pair_similarities(queries: np.ndarray, entries: np.ndarray) -> np.ndarray:
    # einsum (BLAS-free) keeps each pair's value independent of array shape
    return np.einsum("qd,nd->qn", queries, entries)


def search(bank: MemoryBank, queries: np.ndarray, k: int = DEFAULT_K) -> NeighborSet:
    """Exact top-k cosine search, merged across shards.

    Queries are unit-normalized first, so similarity is a plain dot
    product; a zero-norm query is a domain error naming its index.
    """
    n = len(bank)
    if not 1 <= k <= n:
        raise DomainError(f"k must be in [1, {n}], got {k}")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[1] != bank.dim:
        raise DomainError(f"query dim {q.shape[1]} != bank dim {bank.dim}")
    q = _normalize_rows(q, "query")

    cand_idx: list[np.ndarray] = []
    cand_sim: list[np.ndarray] = []
    for start, end in bank.shard_bounds:
        sims = _pair_similarities(q, bank.features[start:end])
        k_local = min(k, end - start)
        # stable sort on descending similarity == tie-break by ascending index
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k_local]
        cand_idx.append(order + start)
        cand_sim.append(np.take_along_axis(sims, order, axis=1))
    all_idx = np.concatenate(cand_idx, axis=1)
    all_sim = np.concatenate(cand_sim, axis=1)
    # candidates are already ascending-index within equal similarities,
    # so one more stable pass yields the global order
    merge = np.argsort(-all_sim, axis=1, kind="stable")[:, :k]
    return NeighborSet(
        indices=np.take_along_axis(all_idx, merge, axis=1),
        similarities=np.take_along_axis(all_sim, merge, axis=1),
    )


def save_bank(bank: MemoryBank, path: str | Path) -> None:
    """Snapshot: MBK1 magic, u32 dim, u64 count, per entry u16 label + f32 values.

    Entry provenance goes to a ``<path>.provenance.tsv`` sidecar.
    """
    path = Path(path)
    if bank.num_classes > 65536:
        raise DomainError("labels beyond u16 cannot be snapshotted")
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<I", bank.dim))
        fh.write(struct.pack("<Q", len(bank)))
        feats32 = bank.features.astype("<f4")
        for i in range(len(bank)):
            fh.write(struct.pack("<H", int(bank.labels[i])))
            fh.write(feats32[i].tobytes())
    lines = [
        f"{i}\t{inst}\t{center:g}\t{cell}\n"
        for i, (inst, center, cell) in enumerate(bank.sources)
    ]
    Path(str(path) + ".provenance.tsv").write_text("".join(lines))


def load_bank(
    path: str | Path,
    capacity: int | None = None,
    num_classes: int | None = None,
) -> MemoryBank:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != BANK_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r} at offset 0, expected {BANK_MAGIC!r}")
    if len(raw) < 16:
        raise FormatError(f"truncated header at offset {len(raw)}")
    dim = struct.unpack_from("<I", raw, 4)[0]
    count = struct.unpack_from("<Q", raw, 8)[0]
    entry_size = 2 + dim * 4
    expected = 16 + count * entry_size
    if len(raw) != expected:
        raise FormatError(f"payload size {len(raw) - 16}, expected {expected - 16}")
    labels = np.empty(count, dtype=np.int64)
    feats = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        off = 16 + i * entry_size
        labels[i] = struct.unpack_from("<H", raw, off)[0]
        feats[i] = np.frombuffer(raw, dtype="<f4", count=dim, offset=off + 2)
    sources: tuple[Source, ...] = tuple()
    prov = Path(str(path) + ".provenance.tsv")
    if prov.is_file():
        rows = []
        for line in prov.read_text().splitlines():
            if line.strip():
                _, inst, center, cell = line.split("\t")
                rows.append((inst, float(center), int(cell)))
        if len(rows) == count:
            sources = tuple(rows)
    if not sources:
        sources = tuple(("", 0.0, i) for i in range(count))
    feats = _normalize_rows(feats, "bank entry")
    return MemoryBank(
        features=feats,
        labels=labels,
        sources=sources,
        capacity=capacity if capacity is not None else max(int(count), 1),
        num_classes=num_classes if num_classes is not None else int(labels.max()) + 1,
        shard_bounds=((0, int(count)),),
    )
