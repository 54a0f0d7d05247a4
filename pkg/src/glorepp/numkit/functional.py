"""Plain-numpy probability helpers and differentiable building blocks."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor

__all__ = [
    "softmax",
    "cross_entropy",
    "entropy",
    "affine",
    "layer_norm",
    "scaled_dot_product_attention",
    "masked_mean",
    "soft_cross_entropy",
    "sinusoidal_positions",
]


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target, predicted) -> float:
    """``-sum_j target_j * ln(predicted_j)``; zero-target terms contribute nothing."""
    target = np.asarray(target, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    nz = target > 0
    return float(-np.sum(target[nz] * np.log(predicted[nz])))


def entropy(p) -> float:
    return cross_entropy(p, p)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x @ w
    return y if b is None else y + b


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc * ((var + eps) ** -0.5) * gain + bias


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, key_mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    ``key_mask`` is boolean, broadcastable to the score shape, True for real keys.
    """
    d = q.shape[-1]
    scores = (q @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / np.sqrt(d))
    if key_mask is not None:
        scores = scores + np.where(key_mask, 0.0, -1e9)
    return scores.softmax(axis=-1) @ v


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis 1 of ``x`` (batch, length, dim), counting only ``mask`` positions."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    counts = m.sum(axis=1)
    return (x * m).sum(axis=1) / counts


def soft_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Batch mean of cross-entropy between target rows and softmax(logits)."""
    targets = np.asarray(targets, dtype=np.float64)
    per_row = -(logits.log_softmax(axis=-1) * targets).sum(axis=-1)
    return per_row.mean()


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(i / 2.0)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
