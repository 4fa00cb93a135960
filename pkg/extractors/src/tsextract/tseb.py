"""TSEB v1 writer, implemented independently against the published byte contract:

    bytes 0-3    magic ``TSEB``
    bytes 4-7    u32 little-endian version = 1
    bytes 8-11   u32 n_layers
    bytes 12-15  u32 n_steps
    bytes 16-19  u32 dim
    bytes 20-    float32 little-endian payload, (layer, step, dim) order

Keeping this writer separate from the consumer package means the
cross-component tests genuinely exercise the format contract.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TSEB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class TsebWriteError(ValueError):
    pass


def write_tensor(path: str | Path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3 or min(data.shape) < 1:
        raise TsebWriteError(f"need a (n_layers, n_steps, dim) array with positive dims, got {data.shape}")
    if not np.isfinite(data).all():
        raise TsebWriteError("refusing to write non-finite embedding data")
    n_layers, n_steps, dim = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_layers, n_steps, dim))
        fh.write(data.tobytes())


def read_header(path: str | Path) -> tuple[int, int, int]:
    """(n_layers, n_steps, dim) from an existing file; used for resume checks."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TsebWriteError(f"{path}: shorter than a TSEB header")
    magic, version, n_layers, n_steps, dim = _HEADER.unpack(raw)
    if magic != MAGIC or version != VERSION:
        raise TsebWriteError(f"{path}: not a TSEB v1 file")
    return n_layers, n_steps, dim
