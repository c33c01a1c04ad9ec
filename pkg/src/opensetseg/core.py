"""Shared array conventions for the open-set segmentation lab.

Everything is plain numpy:

* image: float64 array of shape (H, W, 3) with values in [0, 1]
* label map: integer array of shape (H, W); known classes are 0..C-1,
  the unknown class is C and 255 marks ignored pixels
* logits / probabilities: float64 array of shape (H, W, K), K = C or C + 1
* binary mask: uint8 array of shape (H, W) holding 0/1

Leading batch axes are allowed wherever a function only works per pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IGNORE_ID = 255


@dataclass(frozen=True)
class ClassSpace:
    """Known classes 0..C-1 plus a single unknown slot at index C."""

    num_known: int
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        if self.num_known < 1:
            raise ValueError(f"num_known must be >= 1, got {self.num_known}")
        if 0 <= self.ignore_id <= self.num_known:
            raise ValueError(f"ignore_id {self.ignore_id} collides with class indices")

    @property
    def unknown_id(self) -> int:
        return self.num_known

    @property
    def num_heads(self) -> int:
        return self.num_known + 1


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 3 or image.shape[-1] != 3:
        raise ValueError(f"image must have shape (..., H, W, 3), got {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return image


def check_labels(labels: np.ndarray, cs: ClassSpace, allow_ignore: bool = True) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError(f"label map must be integer typed, got {labels.dtype}")
    valid = (labels >= 0) & (labels <= cs.unknown_id)
    if allow_ignore:
        valid |= labels == cs.ignore_id
    if not valid.all():
        bad = np.unique(labels[~valid])
        raise ValueError(f"label map holds out-of-range values {bad.tolist()}")
    return labels


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return mask.astype(np.uint8)
    if not ((mask == 0) | (mask == 1)).all():
        raise ValueError("binary mask entries must be 0 or 1")
    return mask.astype(np.uint8, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("softmax input contains non-finite values")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def argmax_with_prob(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmax (ties go to the lowest index) and the row maximum."""
    probs = np.asarray(probs, dtype=np.float64)
    # np.argmax returns the first occurrence, which is the lowest-index tie rule
    idx = np.argmax(probs, axis=-1)
    top = np.take_along_axis(probs, idx[..., None], axis=-1)[..., 0]
    return idx.astype(np.int64), top
