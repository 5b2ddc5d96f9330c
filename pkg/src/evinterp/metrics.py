"""PSNR and SSIM for frames in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from .errors import InputError
from .events import Frame

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = a.data if isinstance(a, Frame) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Frame) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, mask=None) -> float:
    """``10 log10(1 / MSE)``; ``math.inf`` for identical inputs.

    ``mask`` (H x W booleans) restricts the error to selected pixels.
    """
    a, b = _pair(a, b)
    err = (a - b) ** 2
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), err.shape[-2:])
        err = err[..., mask]
        if err.size == 0:
            raise InputError("PSNR mask selects no pixels")
    mse = float(err.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luma(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x
    if x.shape[0] == 1:
        return x[0]
    return Frame(x).luma()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b) -> float:
    """Mean SSIM over all fully-covered 11x11 Gaussian windows of the luma."""
    a, b = _pair(a, b)
    x, y = _luma(a), _luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise InputError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def filt(z):
        return fftconvolve(z, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
