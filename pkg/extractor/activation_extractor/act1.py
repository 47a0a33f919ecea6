"""Writer and reader for the ACT1 tensor file consumed by the pipeline.

Layout (little-endian): magic "ACT1", version u32 (=1), h u32, w u32, c u32,
stride u32, then h*w*c float32 values row-major with channels last, then a
crc32 of the payload bytes. Kept independent of the pipeline's own codec so
the two implementations check each other.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"ACT1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def save_act1(path: Path | str, values: np.ndarray, stride: int) -> None:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError("expected an h x w x c array")
    if stride < 1:
        raise ValueError("stride must be positive")
    if not np.isfinite(arr).all() or arr.min() < 0:
        raise ValueError("values must be finite and non-negative")
    h, w, c = arr.shape
    payload = arr.tobytes()
    blob = _HEADER.pack(MAGIC, VERSION, h, w, c, stride) + payload + struct.pack("<I", zlib.crc32(payload))
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_act1(path: Path | str) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise ValueError(f"{path}: truncated file")
    magic, version, h, w, c, stride = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + h * w * c * 4 + 4
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    payload = data[_HEADER.size : -4]
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(payload) != crc:
        raise ValueError(f"{path}: checksum mismatch")
    values = np.frombuffer(payload, dtype=np.float32).reshape(h, w, c)
    return values.copy(), stride
