"""Training losses: Charbonnier distance plus a fixed-feature perceptual term.

Charbonnier is the per-element mean of sqrt(diff^2 + eps^2), computed with
hypot so the zero-difference value is the eps constant exactly. The
perceptual term compares activations of a frozen, seeded two-layer stack of
random 3x3 convolutions with ReLU; per layer the squared feature difference
is normalized by feature count, and the layers are summed.
"""

from __future__ import annotations

import numpy as np

from .tensor_ops import ShapeError, conv3x3, conv3x3_backward, relu, relu_backward

CHARBONNIER_EPS = 1e-3
PERC_WEIGHT = 0.05
PERC_SEED = 7  # frozen extractor seed; independent of training seeds
PERC_CHANNELS = 8


def charbonnier(target: np.ndarray, pred: np.ndarray, eps: float = CHARBONNIER_EPS) -> float:
    loss, _ = charbonnier_with_grad(target, pred, eps)
    return loss


def charbonnier_with_grad(
    target: np.ndarray, pred: np.ndarray, eps: float = CHARBONNIER_EPS
) -> tuple[float, np.ndarray]:
    """Returns (loss, d_loss/d_pred)."""
    if target.shape != pred.shape:
        raise ShapeError(
            f"charbonnier: shapes {tuple(target.shape)} vs {tuple(pred.shape)} differ"
        )
    diff = pred - target
    root = np.hypot(diff, eps)
    grad = diff / (root * diff.size)
    return float(root.mean()), grad


class PerceptualProxy:
    """Frozen random-convolution feature extractor."""

    def __init__(self, seed: int = PERC_SEED, channels: int = PERC_CHANNELS,
                 dtype=np.float64):
        rng = np.random.default_rng([seed])
        self.w1 = (rng.standard_normal((3, 3, 3, channels)) / np.sqrt(27)).astype(dtype)
        self.w2 = (
            rng.standard_normal((3, 3, channels, channels)) / np.sqrt(9 * channels)
        ).astype(dtype)
        self.b = np.zeros(channels, dtype=dtype)

    def features(self, x: np.ndarray) -> tuple[tuple, tuple]:
        pre1 = conv3x3(x, self.w1, self.b)
        f1 = relu(pre1)
        pre2 = conv3x3(f1, self.w2, self.b)
        f2 = relu(pre2)
        return (f1, f2), (x, pre1, f1, pre2)

    def backprop_to_input(self, df1: np.ndarray, df2: np.ndarray, cache: tuple) -> np.ndarray:
        x, pre1, f1, pre2 = cache
        dpre2 = relu_backward(df2, pre2)
        df1 = df1 + conv3x3_backward(dpre2, f1, self.w2)[0]
        dpre1 = relu_backward(df1, pre1)
        return conv3x3_backward(dpre1, x, self.w1)[0]


def perceptual_proxy(
    target: np.ndarray, pred: np.ndarray, feat: PerceptualProxy
) -> float:
    loss, _ = perceptual_with_grad(target, pred, feat)
    return loss


def perceptual_with_grad(
    target: np.ndarray, pred: np.ndarray, feat: PerceptualProxy
) -> tuple[float, np.ndarray]:
    """Returns (loss, d_loss/d_pred); the target side carries no gradient."""
    if target.shape != pred.shape:
        raise ShapeError(
            f"perceptual: shapes {tuple(target.shape)} vs {tuple(pred.shape)} differ"
        )
    (t1, t2), _ = feat.features(target)
    (p1, p2), cache = feat.features(pred)
    d1 = p1 - t1
    d2 = p2 - t2
    loss = float((d1 * d1).mean() + (d2 * d2).mean())
    dpred = feat.backprop_to_input(2.0 * d1 / d1.size, 2.0 * d2 / d2.size, cache)
    return loss, dpred


def total_loss(
    target: np.ndarray,
    pred: np.ndarray,
    lambda_perc: float = PERC_WEIGHT,
    eps: float = CHARBONNIER_EPS,
    feat: PerceptualProxy | None = None,
) -> float:
    total, _, _, _ = total_loss_with_grad(target, pred, lambda_perc, eps, feat)
    return total


def total_loss_with_grad(
    target: np.ndarray,
    pred: np.ndarray,
    lambda_perc: float = PERC_WEIGHT,
    eps: float = CHARBONNIER_EPS,
    feat: PerceptualProxy | None = None,
) -> tuple[float, float, float, np.ndarray]:
    """Returns (total, charbonnier_part, perceptual_part, d_total/d_pred)."""
    char, dchar = charbonnier_with_grad(target, pred, eps)
    if lambda_perc == 0.0:
        return char, char, 0.0, dchar
    if feat is None:
        feat = PerceptualProxy(dtype=pred.dtype)
    perc, dperc = perceptual_with_grad(target, pred, feat)
    return char + lambda_perc * perc, char, perc, dchar + lambda_perc * dperc
