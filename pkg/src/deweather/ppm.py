"""P6 PPM images (maxval 255), the bit-exact interchange format for images.

Float images live in [0, 1]; bytes map via round(v * 255). ``read`` then
``write`` of a PPM file reproduces it byte for byte.
"""

from __future__ import annotations

import os

import numpy as np


class PpmFormatError(ValueError):
    """Raised when a file does not parse as binary PPM."""


def _read_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    # whitespace and '#'-comments separate header tokens
    while pos < len(raw):
        if raw[pos : pos + 1].isspace():
            pos += 1
        elif raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(raw) and not raw[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PpmFormatError("unexpected end of header")
    return raw[start:pos], pos


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a P6 PPM into a float64 H x W x 3 array with values in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P6":
        raise PpmFormatError(f"bad magic {raw[:2]!r}, expected b'P6'")
    pos = 2
    width, pos = _read_token(raw, pos)
    height, pos = _read_token(raw, pos)
    maxval, pos = _read_token(raw, pos)
    try:
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise PpmFormatError(f"non-numeric header field: {exc}") from exc
    if mv != 255:
        raise PpmFormatError(f"maxval {mv} unsupported, expected 255")
    pos += 1  # single whitespace byte after maxval
    expected = pos + w * h * 3
    if len(raw) < expected:
        raise PpmFormatError(
            f"truncated payload: expected {expected} bytes total, have {len(raw)}"
        )
    pixels = np.frombuffer(raw[pos:expected], dtype=np.uint8).reshape(h, w, 3)
    return pixels.astype(np.float64) / 255.0


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write an H x W x 3 float image in [0, 1] as a P6 PPM."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise PpmFormatError(f"expected H x W x 3 image, got shape {tuple(img.shape)}")
    h, w = img.shape[:2]
    quantized = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(quantized.astype(np.uint8).tobytes(order="C"))
