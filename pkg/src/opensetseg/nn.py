"""A three-layer per-pixel segmentation network with hand-written backprop.

conv3x3(3->F) + ReLU -> conv3x3(F->F) + ReLU -> conv1x1(F->K)

The second ReLU output is the feature map the contrastive loss works on.
All parameters live in one flat float64 vector; the layer weights are views
into it. Activations may be computed in float32 to halve memory traffic;
gradients always come back as float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class NetShape:
    num_outputs: int
    width: int = 16
    in_channels: int = 3

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        c, f, k = self.in_channels, self.width, self.num_outputs
        return [
            ("w1", (9 * c, f)), ("b1", (f,)),
            ("w2", (9 * f, f)), ("b2", (f,)),
            ("w3", (f, k)), ("b3", (k,)),
        ]

    @property
    def size(self) -> int:
        return _offsets(self)[-1][3]


@lru_cache(maxsize=None)
def _offsets(shape: NetShape) -> tuple:
    # (name, shape, start, end) per tensor in the flat vector
    out, i = [], 0
    for name, s in shape.layout:
        out.append((name, s, i, i + math.prod(s)))
        i += math.prod(s)
    return tuple(out)


def unpack(shape: NetShape, theta: np.ndarray) -> dict[str, np.ndarray]:
    if theta.shape != (shape.size,):
        raise ValueError(f"expected {shape.size} parameters, got {theta.shape}")
    return {name: theta[i:end].reshape(s) for name, s, i, end in _offsets(shape)}


def init_params(shape: NetShape, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in) for weights and biases of each layer."""
    parts = []
    fan_in = {"w1": 9 * shape.in_channels, "w2": 9 * shape.width, "w3": shape.width}
    for name, s in shape.layout:
        bound = 1.0 / np.sqrt(fan_in["w" + name[1]])
        parts.append(rng.uniform(-bound, bound, size=int(np.prod(s))))
    return np.concatenate(parts)


def _im2col(x: np.ndarray) -> np.ndarray:
    # (N, H, W, C) -> (N, H, W, 9C) with zero "same" padding
    n, h, w, c = x.shape
    padded = np.zeros((n, h + 2, w + 2, c), x.dtype)
    padded[:, 1:-1, 1:-1] = x
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # N,H,W,C,3,3
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, h, w, 9 * c)


def _conv_input_grad(d_out: np.ndarray, w: np.ndarray, c_in: int) -> np.ndarray:
    # gradient of a stride-1 "same" 3x3 conv w.r.t. its input is a 3x3 conv of
    # d_out with the spatially flipped, channel-transposed kernel
    c_out = w.shape[1]
    k = w.reshape(3, 3, c_in, c_out)[::-1, ::-1].transpose(0, 1, 3, 2)
    return _im2col(d_out) @ k.reshape(9 * c_out, c_in)


def _linear_relu(cols: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    z = cols @ w
    z += b
    return np.maximum(z, 0.0, out=z)


class Cache(NamedTuple):
    cols1: np.ndarray
    h1: np.ndarray
    cols2: np.ndarray
    h2: np.ndarray


def forward(
    shape: NetShape, theta: np.ndarray, images: np.ndarray, dtype=np.float64
) -> tuple[np.ndarray, np.ndarray, Cache]:
    """Return (logits, features, cache) for a (N, H, W, 3) batch."""
    p = unpack(shape, theta.astype(dtype, copy=False))
    images = np.asarray(images, dtype=dtype)
    single = images.ndim == 3
    if single:
        images = images[None]
    cols1 = _im2col(images)
    h1 = _linear_relu(cols1, p["w1"], p["b1"])
    cols2 = _im2col(h1)
    h2 = _linear_relu(cols2, p["w2"], p["b2"])
    logits = h2 @ p["w3"] + p["b3"]
    cache = Cache(cols1, h1, cols2, h2)
    if single:
        return logits[0], h2[0], cache
    return logits, h2, cache


def backward(
    shape: NetShape,
    theta: np.ndarray,
    cache: Cache,
    d_logits: np.ndarray,
    d_features: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient w.r.t. the flat parameter vector.

    ``d_logits`` (and optional ``d_features``) must have the batch layout of
    the forward call that produced ``cache``.
    """
    dt = cache.h2.dtype
    p = unpack(shape, theta.astype(dt, copy=False))
    grad = np.zeros(theta.shape, dt)
    g = unpack(shape, grad)
    f = shape.width
    d_logits = d_logits.astype(dt, copy=False).reshape(cache.h2.shape[:3] + (shape.num_outputs,))
    # bias gradients as a product with a ones vector: much faster than sum()
    ones = np.ones(int(np.prod(cache.h2.shape[:3])), dt)

    g["w3"][:] = cache.h2.reshape(-1, f).T @ d_logits.reshape(-1, shape.num_outputs)
    g["b3"][:] = ones @ d_logits.reshape(-1, shape.num_outputs)
    d_h2 = d_logits @ p["w3"].T
    if d_features is not None:
        d_h2 += d_features.astype(dt, copy=False).reshape(d_h2.shape)
    d_z2 = np.multiply(d_h2, cache.h2 > 0, out=d_h2)

    g["w2"][:] = cache.cols2.reshape(-1, 9 * f).T @ d_z2.reshape(-1, f)
    g["b2"][:] = ones @ d_z2.reshape(-1, f)
    d_h1 = _conv_input_grad(d_z2, p["w2"], f)
    d_z1 = np.multiply(d_h1, cache.h1 > 0, out=d_h1)

    c = shape.in_channels
    g["w1"][:] = cache.cols1.reshape(-1, 9 * c).T @ d_z1.reshape(-1, f)
    g["b1"][:] = ones @ d_z1.reshape(-1, f)
    return grad.astype(np.float64, copy=False)


def sgd_step(
    params: np.ndarray, grads: np.ndarray, lr: float, momentum: float, velocity: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Heavy-ball SGD: v = momentum * v + g; params -= lr * v."""
    if params.shape != grads.shape:
        raise ValueError(f"parameter/gradient length mismatch: {params.shape} vs {grads.shape}")
    if velocity is None:
        velocity = np.zeros_like(params)
    velocity = momentum * velocity + grads
    return params - lr * velocity, velocity
