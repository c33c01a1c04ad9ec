"""Binary dilation / erosion and the boundary masks used by the DECON loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import check_mask


@dataclass(frozen=True)
class MorphConfig:
    kernel_size: int = 3
    iterations: int = 1
    crop_size: int = 64
    max_crop_retries: int = 8

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.crop_size < self.kernel_size:
            raise ValueError("crop_size must be >= kernel_size")
        if self.max_crop_retries < 1:
            raise ValueError("max_crop_retries must be >= 1")


def _window_reduce(mask: np.ndarray, k: int, op) -> np.ndarray:
    # zero padding: out-of-bounds pixels count as 0 for both OR and AND
    r = k // 2
    h, w = mask.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r:r + h, r:r + w] = mask.astype(bool)
    out = padded[0:h, 0:w].copy()
    for dy in range(k):
        for dx in range(k):
            if dy == 0 and dx == 0:
                continue
            op(out, padded[dy:dy + h, dx:dx + w], out=out)
    return out.astype(np.uint8)


def dilate(mask: np.ndarray, cfg: MorphConfig = MorphConfig()) -> np.ndarray:
    """Square-window binary dilation repeated ``cfg.iterations`` times."""
    out = check_mask(mask)
    for _ in range(cfg.iterations):
        out = _window_reduce(out, cfg.kernel_size, np.logical_or)
    return out


def erode(mask: np.ndarray, cfg: MorphConfig = MorphConfig()) -> np.ndarray:
    """Square-window binary erosion; pixels near the border erode away."""
    out = check_mask(mask)
    for _ in range(cfg.iterations):
        out = _window_reduce(out, cfg.kernel_size, np.logical_and)
    return out


def random_private_crop(
    private: np.ndarray, cfg: MorphConfig, rng: np.random.Generator
) -> tuple[np.ndarray, tuple[int, int]] | None:
    """Crop a ``crop_size`` square holding at least one private pixel.

    Origins are uniform over all valid positions. Returns None when every
    attempt came back empty.
    """
    private = check_mask(private)
    h, w = private.shape
    c = cfg.crop_size
    if c > h or c > w:
        raise ValueError(f"crop {c}x{c} does not fit in a {h}x{w} mask")
    for _ in range(cfg.max_crop_retries):
        y = int(rng.integers(0, h - c + 1))
        x = int(rng.integers(0, w - c + 1))
        crop = private[y:y + c, x:x + c]
        if crop.any():
            return crop.copy(), (y, x)
    return None


def decon_masks(cropped: np.ndarray, cfg: MorphConfig = MorphConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Return (negative band, positive core) for a cropped private mask.

    The negative band is the dilation minus the mask itself, i.e. the ring of
    non-private pixels hugging the private region. The positive core is the
    erosion.
    """
    cropped = check_mask(cropped)
    negative = dilate(cropped, cfg) - cropped
    positive = erode(cropped, cfg)
    return negative, positive
