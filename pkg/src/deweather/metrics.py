"""Reference PSNR and SSIM for [0, 1] float images."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ValidationError
from .tensor_ops import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB when the images are identical."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {tuple(a.shape)} vs {tuple(b.shape)} differ")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = np.mean(diff * diff)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords * coords) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_WINDOW = _gaussian_window()


def _filter_valid(plane: np.ndarray) -> np.ndarray:
    win = sliding_window_view(plane, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(win, _WINDOW, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity over channels and valid 11x11 window positions.

    Gaussian window sigma 1.5, C1 = (0.01*peak)^2, C2 = (0.03*peak)^2.
    """
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {tuple(a.shape)} vs {tuple(b.shape)} differ")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.ndim != 3:
        raise ShapeError(f"ssim: expected H x W x C image, got {tuple(a.shape)}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValidationError(
            f"ssim: image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    total = 0.0
    channels = a.shape[2]
    for c in range(channels):
        x = np.asarray(a[:, :, c], dtype=np.float64)
        y = np.asarray(b[:, :, c], dtype=np.float64)
        mu_x = _filter_valid(x)
        mu_y = _filter_valid(y)
        var_x = _filter_valid(x * x) - mu_x * mu_x
        var_y = _filter_valid(y * y) - mu_y * mu_y
        cov = _filter_valid(x * y) - mu_x * mu_y
        score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        )
        total += score.mean()
    return float(total / channels)
