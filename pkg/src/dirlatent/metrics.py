"""Fidelity and temporal-stability metrics on (T, H, W, C) clips in [0, 1]."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import LUMA, frames_of
from .errors import ContractError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    flicker: float

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(a, b):
    a, b = frames_of(a), frames_of(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB, capped at 100 dB when MSE < 1e-10."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _gray(frames: np.ndarray) -> np.ndarray:
    if frames.shape[-1] == 3:
        return frames @ LUMA
    if frames.shape[-1] == 1:
        return frames[..., 0]
    raise ContractError(f"expected 1 or 3 channels, got {frames.shape[-1]}")


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable valid-mode filtering over the last two axes
    k = g.size
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Local SSIM of 2-D (or stacked 2-D) grayscale images, valid region only."""
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ContractError(f"frames smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return num / den


def ssim(a, b) -> float:
    """Mean single-scale SSIM over frames of the luma channel."""
    a, b = _pair(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    return float(ssim_map(_gray(a), _gray(b)).mean())


def flicker(pred, truth) -> float:
    """Mean |(pred[t+1] - pred[t]) - (truth[t+1] - truth[t])| over t and pixels."""
    p, t = _pair(pred, truth)
    if p.shape[0] < 2:
        raise ContractError("flicker needs at least two frames")
    return float(np.mean(np.abs(np.diff(p, axis=0) - np.diff(t, axis=0))))


def evaluate_clip(pred, truth) -> MetricReport:
    return MetricReport(psnr=psnr(pred, truth), ssim=ssim(pred, truth), flicker=flicker(pred, truth))
