"""Weighted cross-entropy and the dilation-erosion contrastive loss.

Every loss returns its value together with the gradient with respect to the
array it consumed, so the trainer can chain them into the network backward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import ClassSpace, log_softmax
from .morphology import MorphConfig

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class DeconConfig:
    # a 16-channel ReLU feature map cannot absorb a sharp, heavily weighted
    # contrastive term: tau 0.1 with weight 1 freezes early pseudo-label
    # mistakes into the features
    temperature: float = 0.5
    weight: float = 0.1
    morph: MorphConfig = field(default_factory=MorphConfig)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.weight < 0:
            raise ValueError(f"weight must be >= 0, got {self.weight}")


class LossValue(NamedTuple):
    value: float
    grad: np.ndarray
    skipped: bool = False


def weighted_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, weights: np.ndarray, cs: ClassSpace
) -> LossValue:
    """Mean over non-ignored pixels of weight * (-log p[label]).

    ``logits`` is (..., K) with K = C or C + 1, ``labels`` and ``weights`` match
    the leading shape. Ignored pixels give zero loss and zero gradient, and
    are left out of the normalising count.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), labels.shape)
    if logits.shape[:-1] != labels.shape:
        raise ValueError(f"logits {logits.shape} do not match labels {labels.shape}")
    if (weights < 0).any():
        raise ValueError("pixel weights must be nonnegative")
    k = logits.shape[-1]
    valid = labels != cs.ignore_id
    if (valid & ((labels < 0) | (labels >= k))).any():
        raise ValueError(f"labels outside [0, {k}) found")
    count = int(valid.sum())
    if count == 0:
        return LossValue(0.0, np.zeros_like(logits), True)

    # every pixel goes through the softmax; ignored ones get zero weight
    logp = log_softmax(logits)
    target = np.where(valid, labels, 0).astype(np.intp)[..., None]
    scale = np.where(valid, weights, 0.0) / count
    nll = -np.take_along_axis(logp, target, axis=-1)[..., 0]
    loss = float((scale * nll).sum())

    grad = np.exp(logp)
    np.put_along_axis(grad, target, np.take_along_axis(grad, target, axis=-1) - 1.0, axis=-1)
    grad *= scale[..., None]
    return LossValue(loss, grad)


def _normalize(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.maximum(np.linalg.norm(f, axis=-1, keepdims=True), _NORM_EPS)
    return f / norm, norm


def _normalize_backward(u: np.ndarray, norm: np.ndarray, g_u: np.ndarray) -> np.ndarray:
    # d(f/|f|) applied to an upstream gradient: (g - u (u.g)) / |f|
    return (g_u - u * (u * g_u).sum(axis=-1, keepdims=True)) / norm


def _logsumexp(x: np.ndarray) -> tuple[float, np.ndarray]:
    m = x.max()
    e = np.exp(x - m)
    s = e.sum()
    return float(m + np.log(s)), e / s


def decon_loss(features: np.ndarray, positive: np.ndarray, negative: np.ndarray, cfg: DeconConfig = DeconConfig()) -> LossValue:
    """Contrast the private core against the ring just outside it.

    ``features`` is (H, W, F) for the cropped window; ``positive`` and
    ``negative`` are the erosion core and dilation band from
    :func:`morphology.decon_masks`. The anchor is the renormalised mean of
    the normalised positive features, and the loss is

        -log( sum_p exp(a.u_p / t) / sum_n exp(a.u_n / t) )

    Gradients flow through the anchor as well. An empty core or band gives
    a skipped, zero-valued loss.
    """
    if cfg.temperature <= 0:
        raise ValueError("temperature must be > 0")
    features = np.asarray(features, dtype=np.float64)
    pos = np.asarray(positive).astype(bool)
    neg = np.asarray(negative).astype(bool)
    if pos.shape != features.shape[:-1] or neg.shape != pos.shape:
        raise ValueError("mask shapes must match the feature map")
    grad = np.zeros_like(features)
    if not pos.any() or not neg.any():
        return LossValue(0.0, grad, True)

    t = cfg.temperature
    u_p, n_p = _normalize(features[pos])
    u_n, n_n = _normalize(features[neg])
    mean = u_p.mean(axis=0)
    anchor, n_m = _normalize(mean)

    s_p = u_p @ anchor / t
    s_n = u_n @ anchor / t
    lse_p, soft_p = _logsumexp(s_p)
    lse_n, soft_n = _logsumexp(s_n)
    loss = lse_n - lse_p

    d_sp = -soft_p / t
    d_sn = soft_n / t
    g_anchor = d_sp @ u_p + d_sn @ u_n
    g_mean = _normalize_backward(anchor, n_m, g_anchor)
    g_up = d_sp[:, None] * anchor + g_mean / u_p.shape[0]
    g_un = d_sn[:, None] * anchor

    grad[pos] += _normalize_backward(u_p, n_p, g_up)
    grad[neg] += _normalize_backward(u_n, n_n, g_un)
    return LossValue(float(loss), grad)


def total_loss(
    source_ce: LossValue, target_ce: LossValue, decon: LossValue, decon_weight: float
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Sum the three terms; each gradient is scaled by its coefficient."""
    value = source_ce.value + target_ce.value + decon_weight * decon.value
    return value, (source_ce.grad, target_ce.grad, decon_weight * decon.grad)
