"""Binary PGM (P5) images for masks and heatmaps."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def write_pgm(path, image: np.ndarray, maxval: int) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    if img.min(initial=0) < 0 or img.max(initial=0) > maxval:
        raise ValueError("pixel values outside [0, maxval]")
    h, w = img.shape
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + img.astype(dtype).tobytes())


def read_pgm(path) -> tuple[np.ndarray, int]:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM: {tokens[0]!r}", 0)
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(buf) - pos < n:
        raise FormatError("truncated PGM payload", len(buf))
    return np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64), maxval


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(mask, 255, 0), 255)


def read_mask(path) -> np.ndarray:
    img, maxval = read_pgm(path)
    return img == maxval


def write_heatmap(path, values: np.ndarray) -> None:
    """16-bit heatmap of values in [-1, 1]: round((v + 1) / 2 * 65535)."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    write_pgm(path, np.round((v + 1.0) / 2.0 * 65535).astype(np.int64), 65535)
