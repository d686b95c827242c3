"""MVLT binary tensor files.

Layout: 4-byte magic ``MVLT``, version byte (1), dtype byte (0 = float32,
1 = float64), rank byte, ``rank`` little-endian uint32 dims, then the
row-major little-endian payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

MAGIC = b"MVLT"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class MvltFormatError(ValueError):
    """Raised when a file does not parse as MVLT."""


def write_mvlt(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write ``array`` (float32 or float64) to ``path`` in MVLT format."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _CODE_FOR_KIND:
        raise MvltFormatError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    if arr.ndim > 255:
        raise MvltFormatError(f"rank {arr.ndim} exceeds the 1-byte rank field")
    header = bytearray()
    header += MAGIC
    header += bytes([VERSION, _CODE_FOR_KIND[arr.dtype], arr.ndim])
    for dim in arr.shape:
        header += int(dim).to_bytes(4, "little")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def read_mvlt(path: str | os.PathLike) -> np.ndarray:
    """Read an MVLT file back into a numpy array (native byte order)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 7:
        raise MvltFormatError(f"file too short for an MVLT header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise MvltFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if raw[4] != VERSION:
        raise MvltFormatError(f"bad version {raw[4]}, expected {VERSION}")
    if raw[5] not in _DTYPE_CODES:
        raise MvltFormatError(f"bad dtype code {raw[5]}, expected 0 (f32) or 1 (f64)")
    dtype = _DTYPE_CODES[raw[5]]
    rank = raw[6]
    dims_end = 7 + 4 * rank
    if len(raw) < dims_end:
        raise MvltFormatError(f"truncated dims: need {dims_end} header bytes, have {len(raw)}")
    shape = tuple(
        int.from_bytes(raw[7 + 4 * i : 11 + 4 * i], "little") for i in range(rank)
    )
    count = 1
    for dim in shape:
        count *= dim
    expected = dims_end + count * dtype.itemsize
    if len(raw) != expected:
        raise MvltFormatError(
            f"truncated payload: expected {expected} bytes total, have {len(raw)}"
        )
    flat = np.frombuffer(raw[dims_end:], dtype=dtype)
    return flat.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
