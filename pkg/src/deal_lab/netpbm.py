"""Binary PPM (P6) / PGM (P5) readers and writers, 8-bit only."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _header(kind: bytes, width: int, height: int) -> bytes:
    return kind + f"\n{width} {height}\n255\n".encode("ascii")


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an H×W×3 float image in [0,1] (or uint8) as P6."""
    data = image if image.dtype == np.uint8 else np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    h, w, _ = data.shape
    Path(path).write_bytes(_header(b"P6", w, h) + np.ascontiguousarray(data).tobytes())


def write_pgm(path: str | Path, mask: np.ndarray) -> None:
    """Write a boolean H×W mask as P5 with 255 = foreground."""
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(_header(b"P5", w, h) + data.tobytes())


def _parse(buf: bytes) -> tuple[bytes, int, int, int, int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end : end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    pos += 1  # single whitespace before raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"only 8-bit netpbm supported, maxval={maxval}")
    return magic, w, h, maxval, pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Read P6 into an H×W×3 float64 array in [0,1]."""
    buf = Path(path).read_bytes()
    magic, w, h, _, pos = _parse(buf)
    if magic != b"P6":
        raise ValueError(f"{path}: not a P6 file")
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raw.reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path: str | Path) -> np.ndarray:
    """Read P5 into a boolean H×W mask (nonzero = foreground)."""
    buf = Path(path).read_bytes()
    magic, w, h, _, pos = _parse(buf)
    if magic != b"P5":
        raise ValueError(f"{path}: not a P5 file")
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w) > 127
