"""PFV1 writer: the wire format the benchmark core consumes.

Layout: 4-byte magic ``PFV1``, little-endian u32 grid_h, grid_w, dim,
dtype_code (0 = f32), then grid_h*grid_w*dim raw little-endian f32 values
in (row, col, channel) order. Writes are atomic (temp file then rename).
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFV1"
DTYPE_F32 = 0


def write_pfv(array: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError("feature array must be (grid_h, grid_w, dim)")
    if not np.isfinite(arr).all():
        raise ValueError(f"{path}: refusing to write non-finite features")
    grid_h, grid_w, dim = arr.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", grid_h, grid_w, dim, DTYPE_F32))
        fh.write(arr.tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_sidecar(entries: list[tuple[str, int, int, int, str]], path: str | Path) -> None:
    """One line per file: path<TAB>grid_h<TAB>grid_w<TAB>dim<TAB>class_file."""
    lines = [f"{p}\t{gh}\t{gw}\t{dim}\t{cf}\n" for p, gh, gw, dim, cf in entries]
    Path(path).write_text("".join(lines))
