"""Dense array operations with explicit hand-written backward rules.

Arrays are plain C-contiguous (row-major) numpy ndarrays; float64 is used
wherever gradients are checked, float32 is allowed on speed paths. Every
forward here has a matching ``*_backward`` returning exact vector-Jacobian
products, and ``grad_check`` is the finite-difference oracle that keeps the
backward rules honest.

All functions are pure: no hidden state, safe to call concurrently.
Batched inputs carry leading axes; reductions use numpy's fixed evaluation
order, so results are bit-reproducible for a given build.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# matmul


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions disagree for {tuple(a.shape)} x {tuple(b.shape)}"
        )
    return a @ b


def matmul_backward(
    dc: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """dA = dC @ B^T, dB = A^T @ dC, summed over broadcast leading axes."""
    da = dc @ _swap_last(b)
    db = _swap_last(a) @ dc
    return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# softmax over rows (last axis)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-stable softmax along the last axis; rows sum to 1."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward given the forward output ``y``."""
    return (dy - (dy * y).sum(axis=-1, keepdims=True)) * y


# ---------------------------------------------------------------------------
# elementwise


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def clamp01_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass-through inside [0, 1], zero outside."""
    return dy * ((x >= 0.0) & (x <= 1.0))


# ---------------------------------------------------------------------------
# layer normalization (over the last axis)


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, tuple]:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: gain/bias {tuple(gain.shape)}/{tuple(bias.shape)} "
            f"do not match feature dim of {tuple(x.shape)}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(
    dy: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv, gain = cache
    dxhat = dy * gain
    mean_d = dxhat.mean(axis=-1, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_d - xhat * mean_dx)
    reduce_axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=reduce_axes)
    dbias = dy.sum(axis=reduce_axes)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# global average pooling over spatial axes


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the two spatial axes of (H, W, C) or batched (B, H, W, C)."""
    if x.ndim == 3:
        return x.mean(axis=(0, 1))
    if x.ndim == 4:
        return x.mean(axis=(1, 2))
    raise ShapeError(f"global_avg_pool: expected rank 3 or 4, got {tuple(x.shape)}")


def global_avg_pool_backward(dq: np.ndarray, x_shape: tuple[int, ...]) -> np.ndarray:
    if len(x_shape) == 3:
        h, w, _ = x_shape
        return np.broadcast_to(dq / (h * w), x_shape).copy()
    b, h, w, c = x_shape
    return np.broadcast_to(dq.reshape(b, 1, 1, c) / (h * w), x_shape).copy()


# ---------------------------------------------------------------------------
# 3x3 same-padding convolution (NHWC, bias per output channel)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution; ``w`` is (3, 3, Cin, Cout), ``b`` is (Cout,)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or w.shape[:2] != (3, 3) or x.shape[-1] != w.shape[2]:
        raise ShapeError(
            f"conv3x3: input {tuple(x.shape)} incompatible with kernel {tuple(w.shape)}"
        )
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (B,H,W,Cin,3,3)
    y = np.tensordot(win, w, axes=([3, 4, 5], [2, 0, 1])) + b
    return y[0] if squeeze else y


def conv3x3_backward(
    dy: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    squeeze = x.ndim == 3
    if squeeze:
        x, dy = x[None], dy[None]
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))
    dw = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))  # (Cin,3,3,Cout)
    dw = dw.transpose(1, 2, 0, 3)
    db = dy.sum(axis=(0, 1, 2))
    # dx is a same-conv of dy with the spatially flipped, in/out-swapped kernel
    w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2)
    dpad = np.pad(dy, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dwin = sliding_window_view(dpad, (3, 3), axis=(1, 2))
    dx = np.tensordot(dwin, w_flip, axes=([3, 4, 5], [2, 0, 1]))
    if squeeze:
        dx = dx[0]
    return dx, dw, db


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    h: float = 1e-6,
    value_fn: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Max relative error of an analytic gradient against central differences.

    ``f(x)`` must return ``(scalar_value, gradient_wrt_x)``. The error at each
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``; the max over
    coordinates is returned. Use float64 inputs and h in [1e-7, 1e-4].

    ``value_fn``, when given, is a cheaper forward-only evaluation used for
    the finite-difference probes; it must agree with ``f(x)[0]`` exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    value, analytic = f(x)
    if not np.isfinite(value):
        raise FloatingPointError(f"grad_check: f(x) is not finite ({value})")
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeError(
            f"grad_check: gradient shape {tuple(analytic.shape)} "
            f"does not match input shape {tuple(x.shape)}"
        )
    if value_fn is None:
        value_fn = lambda v: f(v)[0]  # noqa: E731
    worst = 0.0
    flat = x.ravel().copy()
    view = flat.reshape(x.shape)
    analytic_flat = analytic.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = value_fn(view)
        flat[i] = orig - h
        minus = value_fn(view)
        flat[i] = orig
        numeric = (plus - minus) / (2.0 * h)
        a = analytic_flat[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst
