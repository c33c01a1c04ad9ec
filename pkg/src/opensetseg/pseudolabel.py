"""Teacher-side machinery: pseudo-labels, image confidence, private masks, EMA."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import ClassSpace, argmax_with_prob

Refiner = Callable[[np.ndarray], np.ndarray]


def identity_refiner(labels: np.ndarray) -> np.ndarray:
    return labels


def _check_threshold(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def generate_pseudo_label(known_probs: np.ndarray, tau_p: float, refine: Refiner = identity_refiner) -> np.ndarray:
    """Label each pixel with its best known class, or unknown when unsure.

    ``known_probs`` holds the teacher's probabilities for the C known classes
    only (shape (..., C)); when the teacher has an extra unknown head, slice
    it off *after* the softmax so the unknown mass still lowers the known max.
    The unknown id is C. ``refine`` is a labels -> labels hook applied last.
    """
    _check_threshold("tau_p", tau_p)
    known_probs = np.asarray(known_probs, dtype=np.float64)
    unknown_id = known_probs.shape[-1]
    idx, top = argmax_with_prob(known_probs)
    labels = np.where(top >= tau_p, idx, unknown_id)
    return refine(labels)


def confidence_ratio(known_probs: np.ndarray, tau_t: float) -> float:
    """Fraction of pixels whose max known-class probability reaches tau_t."""
    _check_threshold("tau_t", tau_t)
    top = np.asarray(known_probs, dtype=np.float64).max(axis=-1)
    return float(np.count_nonzero(top >= tau_t)) / top.size


def private_mask(labels: np.ndarray, cs: ClassSpace) -> np.ndarray:
    labels = np.asarray(labels)
    if (labels == cs.ignore_id).any():
        raise ValueError("pseudo-labels must not contain the ignore id")
    return (labels == cs.unknown_id).astype(np.uint8)


def ema_update(teacher: np.ndarray, student: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * teacher + (1 - alpha) * student, elementwise."""
    teacher = np.asarray(teacher, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    if teacher.shape != student.shape:
        raise ValueError(f"parameter length mismatch: {teacher.shape} vs {student.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * teacher + (1.0 - alpha) * student
