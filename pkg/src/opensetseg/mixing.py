"""ClassMix and the two OpenReMix steps (resize-and-paste, attach private)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import IGNORE_ID, check_mask


@dataclass(frozen=True)
class MixConfig:
    resize_scale: float = 0.5
    thing_class_ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.resize_scale <= 0:
            raise ValueError(f"resize_scale must be > 0, got {self.resize_scale}")
        object.__setattr__(self, "thing_class_ids", frozenset(int(c) for c in self.thing_class_ids))

    def validate(self, num_known: int) -> None:
        bad = [c for c in self.thing_class_ids if not 0 <= c < num_known]
        if bad:
            raise ValueError(f"thing classes {sorted(bad)} are not known classes")


class MixedPair(NamedTuple):
    image: np.ndarray
    label: np.ndarray
    # 1 where the content was brought in from the other image
    origin_mask: np.ndarray


class ThingPatch(NamedTuple):
    image: np.ndarray
    mask: np.ndarray
    origin: tuple[int, int]


def blend(mask: np.ndarray, foreground: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Hard mask composite: foreground where mask is 1, background elsewhere."""
    mask = check_mask(mask).astype(bool)
    foreground = np.asarray(foreground)
    background = np.asarray(background)
    if foreground.shape != background.shape or foreground.shape[:2] != mask.shape:
        raise ValueError(
            f"shape mismatch: mask {mask.shape}, fg {foreground.shape}, bg {background.shape}"
        )
    if foreground.ndim == 3:
        mask = mask[..., None]
    return np.where(mask, foreground, background)


def classmix_mask(source_label: np.ndarray, rng: np.random.Generator, ignore_id: int = IGNORE_ID) -> tuple[np.ndarray, np.ndarray]:
    """Pick ceil(K/2) of the K classes present and return (mask, chosen ids)."""
    present = np.unique(source_label)
    present = present[present != ignore_id]
    if present.size == 0:
        raise ValueError("source label has no non-ignore class to mix")
    n = math.ceil(present.size / 2)
    chosen = np.sort(rng.choice(present, size=n, replace=False))
    return np.isin(source_label, chosen).astype(np.uint8), chosen


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, edge clamped (the align_corners=False convention)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = image.shape[:2]
    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    if image.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def resize_nearest(array: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = array.shape[:2]
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return array[ys][:, xs]


def resize_thing_patch(
    image: np.ndarray,
    label: np.ndarray,
    class_id: int,
    scale: float,
    rng: np.random.Generator,
    frame_shape: tuple[int, int] | None = None,
) -> ThingPatch | None:
    """Cut out ``class_id``'s bounding box, rescale it and choose a paste spot.

    The image patch is resized bilinearly, the class mask by nearest neighbour.
    The paste origin is uniform over positions where the patch fits inside
    ``frame_shape`` (defaults to the source size); None if it cannot fit.
    """
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    ys, xs = np.nonzero(label == class_id)
    if ys.size == 0:
        raise ValueError(f"class {class_id} is not present in the label map")
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    crop_img = image[y0:y1, x0:x1]
    crop_mask = (label[y0:y1, x0:x1] == class_id).astype(np.uint8)
    ph = max(1, int(round((y1 - y0) * scale)))
    pw = max(1, int(round((x1 - x0) * scale)))
    patch_img = resize_bilinear(crop_img, ph, pw)
    patch_mask = resize_nearest(crop_mask, ph, pw)
    fh, fw = frame_shape if frame_shape is not None else label.shape
    if ph > fh or pw > fw:
        return None
    oy = int(rng.integers(0, fh - ph + 1))
    ox = int(rng.integers(0, fw - pw + 1))
    return ThingPatch(patch_img, patch_mask, (oy, ox))


def paste_patch(image: np.ndarray, label: np.ndarray, patch: ThingPatch, class_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Overwrite ``image``/``label`` under the patch mask; returns the paste mask too."""
    image = image.copy()
    label = label.copy()
    ph, pw = patch.mask.shape
    oy, ox = patch.origin
    m = patch.mask.astype(bool)
    image[oy:oy + ph, ox:ox + pw][m] = patch.image[m]
    label[oy:oy + ph, ox:ox + pw][m] = class_id
    pasted = np.zeros(label.shape, dtype=np.uint8)
    pasted[oy:oy + ph, ox:ox + pw] = patch.mask
    return image, label, pasted


def classmix_target(source, target, rng: np.random.Generator, ignore_id: int = IGNORE_ID) -> tuple[MixedPair, np.ndarray]:
    """Plain ClassMix of source classes onto the target; returns (pair, chosen ids)."""
    src_img, src_lbl = source
    tgt_img, tgt_lbl = target
    mask, chosen = classmix_mask(src_lbl, rng, ignore_id)
    pair = MixedPair(blend(mask, src_img, tgt_img), blend(mask, src_lbl, tgt_lbl), mask)
    return pair, chosen


def openremix_target(source, target, cfg: MixConfig, rng: np.random.Generator, ignore_id: int = IGNORE_ID) -> MixedPair:
    """ClassMix onto the target, then paste one extra thing class resized.

    ``source`` is (image, labels) and ``target`` is (image, pseudo-labels).
    The extra class is drawn from thing classes present in the source,
    preferring ones ClassMix did not already select. Without any thing class
    this is plain ClassMix.
    """
    src_img, src_lbl = source
    pair, chosen = classmix_target(source, target, rng, ignore_id)
    present = [c for c in np.unique(src_lbl).tolist() if c in cfg.thing_class_ids]
    if not present:
        return pair
    fresh = [c for c in present if c not in set(chosen.tolist())]
    pool = fresh or present
    class_id = int(pool[int(rng.integers(0, len(pool)))])
    patch = resize_thing_patch(src_img, src_lbl, class_id, cfg.resize_scale, rng, pair.label.shape)
    if patch is None:
        return pair
    image, label, pasted = paste_patch(pair.image, pair.label, patch, class_id)
    return MixedPair(image, label, (pair.origin_mask | pasted).astype(np.uint8))


def attach_private(source, target, private: np.ndarray) -> MixedPair:
    """Copy the target's private regions (and their pseudo-labels) onto the source."""
    src_img, src_lbl = source
    tgt_img, tgt_lbl = target
    private = check_mask(private)
    return MixedPair(blend(private, tgt_img, src_img), blend(private, tgt_lbl, src_lbl), private.copy())
