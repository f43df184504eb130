"""Binary patch-feature files, pixel masks, and grid/pixel label conversion.

The on-disk feature format is ``PFV1``: a 4-byte magic, four little-endian
u32 header fields (grid_h, grid_w, dim, dtype_code where 0 means 32-bit
float), then grid_h*grid_w*dim raw little-endian f32 values ordered by
(row, col, channel). Masks are 8-bit single-channel images whose pixel
value is the semantic class id.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError, FormatError

MAGIC = b"PFV1"
DTYPE_F32 = 0
_HEADER = struct.Struct("<4I")
_PAYLOAD_OFFSET = 4 + _HEADER.size


@dataclass(frozen=True)
class PatchFeatureMap:
    """Dense H x W grid of D-dimensional patch features for one image."""

    grid_h: int
    grid_w: int
    dim: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if min(self.grid_h, self.grid_w, self.dim) < 1:
            raise ValueError("grid_h, grid_w and dim must be positive")
        if self.data.shape != (self.grid_h, self.grid_w, self.dim):
            raise ValueError(
                f"data shape {self.data.shape} does not match "
                f"({self.grid_h}, {self.grid_w}, {self.dim})"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("feature values must be finite")

    @classmethod
    def from_array(cls, data: np.ndarray) -> "PatchFeatureMap":
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError("feature array must be (grid_h, grid_w, dim)")
        return cls(arr.shape[0], arr.shape[1], arr.shape[2], arr)

    def cells(self) -> np.ndarray:
        """Row-major (grid_h*grid_w, dim) view of the feature grid."""
        return self.data.reshape(-1, self.dim)


def write_feature_file(feature_map: PatchFeatureMap, path: str | Path) -> None:
    """Write a PFV1 file; round-trips bit-exactly through read_feature_file."""
    arr = np.ascontiguousarray(feature_map.data, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(arr).ravel())
    if bad.size:
        raise FormatError(
            f"non-finite value at offset {_PAYLOAD_OFFSET + 4 * int(bad[0])}"
        )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            _HEADER.pack(feature_map.grid_h, feature_map.grid_w, feature_map.dim, DTYPE_F32)
        )
        fh.write(arr.tobytes())


def read_feature_file(path: str | Path) -> PatchFeatureMap:
    """Read a PFV1 file, validating magic, header, payload size and finiteness."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4 or magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"truncated header at offset {4 + len(header)}")
        grid_h, grid_w, dim, dtype_code = _HEADER.unpack(header)
        for offset, name, value in ((4, "grid_h", grid_h), (8, "grid_w", grid_w), (12, "dim", dim)):
            if value == 0:
                raise FormatError(f"zero {name} at offset {offset}")
        if dtype_code != DTYPE_F32:
            raise FormatError(f"unsupported dtype_code {dtype_code} at offset 16")
        expected = grid_h * grid_w * dim * 4
        payload = fh.read(expected)
        if len(payload) < expected:
            raise FormatError(f"truncated payload at offset {_PAYLOAD_OFFSET + len(payload)}")
        if fh.read(1):
            raise FormatError(f"trailing bytes at offset {_PAYLOAD_OFFSET + expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(grid_h, grid_w, dim)
    finite = np.isfinite(arr).ravel()
    if not finite.all():
        first = int(np.flatnonzero(~finite)[0])
        raise FormatError(f"non-finite value at offset {_PAYLOAD_OFFSET + 4 * first}")
    return PatchFeatureMap(grid_h, grid_w, dim, np.array(arr, dtype=np.float32))


def _block_bounds(size: int, cells: int) -> np.ndarray:
    # even partition; uneven remainders widen some blocks to ceil size
    return (np.arange(cells + 1) * size) // cells


def downsample_mask(mask: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Reduce a pixel mask to a patch-label grid by per-block majority vote.

    Ties go to the smallest class id. Blocks partition the mask evenly;
    when the size does not divide, edge blocks absorb the extra pixels.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DomainError("mask must be a 2-D class-id array")
    h, w = mask.shape
    if grid_h > h or grid_w > w:
        raise DomainError(
            f"grid ({grid_h}x{grid_w}) larger than mask ({h}x{w})"
        )
    rows = _block_bounds(h, grid_h)
    cols = _block_bounds(w, grid_w)
    grid = np.zeros((grid_h, grid_w), dtype=np.int64)
    for i in range(grid_h):
        for j in range(grid_w):
            block = mask[rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
            counts = np.bincount(block.ravel())
            grid[i, j] = int(np.argmax(counts))
    return grid


def _source_coords(out_size: int, cells: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # cell centers at (i + 0.5) / cells of the unit extent (align-corners false)
    s = (np.arange(out_size) + 0.5) * cells / out_size - 0.5
    lo = np.floor(s).astype(np.int64)
    frac = s - lo
    lo0 = np.clip(lo, 0, cells - 1)
    lo1 = np.clip(lo + 1, 0, cells - 1)
    return lo0, lo1, frac


def upsample_distribution(
    distributions: np.ndarray,
    out_h: int,
    out_w: int,
    mode: str = "bilinear",
) -> np.ndarray:
    """Interpolate per-cell class distributions to pixels and take argmax.

    Bilinear by default (nearest available for ablation); per-pixel argmax
    breaks ties toward the smallest class id.
    """
    d = np.asarray(distributions, dtype=np.float64)
    if d.ndim != 3:
        raise DomainError("distributions must be (grid_h, grid_w, num_classes)")
    sums = d.sum(axis=2)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise DomainError("per-cell class distributions must sum to 1")
    grid_h, grid_w, _ = d.shape
    if mode == "nearest":
        ri = np.minimum((np.arange(out_h) * grid_h) // out_h, grid_h - 1)
        ci = np.minimum((np.arange(out_w) * grid_w) // out_w, grid_w - 1)
        pix = d[ri][:, ci]
    elif mode == "bilinear":
        r0, r1, tr = _source_coords(out_h, grid_h)
        c0, c1, tc = _source_coords(out_w, grid_w)
        rows = d[r0] * (1.0 - tr)[:, None, None] + d[r1] * tr[:, None, None]
        pix = rows[:, c0] * (1.0 - tc)[None, :, None] + rows[:, c1] * tc[None, :, None]
    else:
        raise DomainError(f"unknown upsampling mode {mode!r}")
    return np.argmax(pix, axis=2).astype(np.int64)


def read_mask(path: str | Path) -> np.ndarray:
    """Load an 8-bit single-channel class-id mask."""
    with Image.open(path) as img:
        if img.mode == "1":
            img = img.convert("L")
        if img.mode not in ("L", "P"):
            raise FormatError(
                f"{path}: mask must be single-channel 8-bit, got mode {img.mode!r}"
            )
        return np.array(img, dtype=np.uint8)


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DomainError("mask must be 2-D")
    if mask.min() < 0 or mask.max() > 255:
        raise DomainError("mask class ids must fit in 8 bits")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def feature_relpath(image_relpath: str) -> str:
    """Feature-file path mirroring an image path, with the .pfv suffix."""
    return str(Path(image_relpath).with_suffix(".pfv").as_posix())


def write_sidecar(
    entries: list[tuple[str, int, int, int, str]], path: str | Path
) -> None:
    """Sidecar manifest: path<TAB>grid_h<TAB>grid_w<TAB>dim<TAB>class_file."""
    lines = [f"{p}\t{gh}\t{gw}\t{dim}\t{cf}\n" for p, gh, gw, dim, cf in entries]
    Path(path).write_text("".join(lines))


def read_sidecar(path: str | Path) -> list[tuple[str, int, int, int, str]]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
        p, gh, gw, dim, cf = fields
        entries.append((p, int(gh), int(gw), int(dim), cf))
    return entries
