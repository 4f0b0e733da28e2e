"""Training losses (L1, frequency-domain, combined) and evaluation
metrics (PSNR, SSIM, error maps).

Both losses use mean reduction so the frequency weight is resolution
independent. The frequency loss penalizes real and imaginary parts of the
spectrum separately, keeping phase information in play. Metrics operate on
plain numpy arrays in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .tensor import DimensionError, Tensor, abs_, add, fft2_per_channel, mean_all, scale, sub


@dataclass
class LossBreakdown:
    l1_left: Tensor
    l1_right: Tensor
    fre_left: Tensor
    fre_right: Tensor
    total: Tensor
    lam: float

    def as_floats(self) -> dict:
        return {
            "l1_left": self.l1_left.item(),
            "l1_right": self.l1_right.item(),
            "fre_left": self.fre_left.item(),
            "fre_right": self.fre_right.item(),
            "total": self.total.item(),
            "lambda": self.lam,
        }


def _check_same_shape(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"loss inputs must share a shape: {a.shape} vs {b.shape}")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape(pred, target)
    return mean_all(abs_(sub(pred, target)))


def fft_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape(pred, target)
    re_p, im_p = fft2_per_channel(pred)
    re_t, im_t = fft2_per_channel(target)
    return add(mean_all(abs_(sub(re_p, re_t))), mean_all(abs_(sub(im_p, im_t))))


def total_loss(e_l: Tensor, e_r: Tensor, g_l: Tensor, g_r: Tensor, lam: float = 0.1) -> LossBreakdown:
    l1_l = l1_loss(e_l, g_l)
    l1_r = l1_loss(e_r, g_r)
    fre_l = fft_loss(e_l, g_l)
    fre_r = fft_loss(e_r, g_r)
    total = add(add(l1_l, l1_r), scale(add(fre_l, fre_r), lam))
    return LossBreakdown(l1_l, l1_r, fre_l, fre_r, total, lam)


# ---------------------------------------------------------------------------
# metrics (numpy, non-differentiable)


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"psnr inputs must share a shape: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = (size - 1) / 2.0
    x = np.arange(size) - r
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, win: np.ndarray, k1: float, k2: float, drange: float) -> float:
    c1 = (k1 * drange) ** 2
    c2 = (k2 * drange) ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    s_aa = convolve2d(a * a, win, mode="valid") - mu_a * mu_a
    s_bb = convolve2d(b * b, win, mode="valid") - mu_b * mu_b
    s_ab = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def ssim(pred: np.ndarray, target: np.ndarray, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Single-scale SSIM with a Gaussian window, per channel, averaged."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"ssim inputs must share a shape: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred = pred[None]
        target = target[None]
    if pred.ndim != 3:
        raise DimensionError("ssim expects [C,H,W] or [H,W] images")
    _, h, w = pred.shape
    if h < win_size or w < win_size:
        raise DimensionError(f"image {h}x{w} smaller than the {win_size}x{win_size} SSIM window")
    win = _gaussian_window(win_size, sigma)
    vals = [_ssim_channel(pred[c], target[c], win, k1, k2, data_range) for c in range(pred.shape[0])]
    return float(np.mean(vals))


def error_map(pred: np.ndarray, target: np.ndarray, e_max_display: float = 0.25) -> np.ndarray:
    """Grayscale [H,W] map in [0,1]; larger reconstruction error is darker."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"error_map inputs must share a shape: {pred.shape} vs {target.shape}")
    e = np.abs(pred - target).mean(axis=0)
    return 1.0 - np.minimum(1.0, e / e_max_display)
