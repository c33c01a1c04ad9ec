"""Binary PPM (P6) / PGM (P5) with 8-bit samples.

Written files always use the minimal header ``P6\\n<w> <h>\\n255\\n`` (or P5),
followed by row-major samples. The reader also accepts comments and
arbitrary whitespace between header tokens.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _encode(magic: bytes, array: np.ndarray) -> bytes:
    if array.dtype != np.uint8:
        raise TypeError(f"netpbm samples must be uint8, got {array.dtype}")
    h, w = array.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(array).tobytes()


def _decode(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated netpbm header")
        tokens.append(data[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"expected {magic!r} file, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only 8-bit netpbm is supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    n = w * h * channels
    body = data[pos:pos + n]
    if len(body) != n:
        raise ValueError("truncated netpbm body")
    shape = (h, w, channels) if channels > 1 else (h, w)
    return np.frombuffer(body, dtype=np.uint8).reshape(shape).copy()


def write_ppm(path, rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got {rgb.shape}")
    Path(path).write_bytes(_encode(b"P6", rgb))


def read_ppm(path) -> np.ndarray:
    return _decode(Path(path).read_bytes(), b"P6", 3)


def write_pgm(path, gray: np.ndarray) -> None:
    if gray.ndim != 2:
        raise ValueError(f"PGM needs (H, W), got {gray.shape}")
    Path(path).write_bytes(_encode(b"P5", gray))


def read_pgm(path) -> np.ndarray:
    return _decode(Path(path).read_bytes(), b"P5", 1)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) / 255.0
