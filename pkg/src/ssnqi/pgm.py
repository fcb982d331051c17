"""Minimal binary PGM (P5) reader and writer."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .validation import DataError

_HEADER = re.compile(
    rb"^P5(?:\s+|\s*#[^\r\n]*[\r\n])+"
    rb"(\d+)(?:\s+|\s*#[^\r\n]*[\r\n])+"
    rb"(\d+)(?:\s+|\s*#[^\r\n]*[\r\n])+"
    rb"(\d+)\s"
)


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return ``(image, maxval)``; 16-bit samples are big-endian per the netpbm format."""
    buf = Path(path).read_bytes()
    m = _HEADER.match(buf)
    if m is None:
        raise DataError(f"{path}: not a binary (P5) PGM file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: maxval {maxval} out of range")
    dtype = ">u1" if maxval < 256 else ">u2"
    count = width * height
    need = m.end() + count * np.dtype(dtype).itemsize
    if len(buf) < need:
        raise DataError(f"{path}: truncated pixel data")
    img = np.frombuffer(buf, dtype=dtype, count=count, offset=m.end()).reshape(height, width)
    return img.astype(np.int64), maxval


def write_pgm(path, image: np.ndarray, maxval: int | None = None) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if maxval is None:
        maxval = 255 if img.max(initial=0) < 256 else 65535
    if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
        raise ValueError("pixel values outside [0, maxval]")
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(np.ascontiguousarray(img, dtype=dtype).tobytes())
