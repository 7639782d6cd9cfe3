"""PSNR, SSIM and RMSE on the 0-255 scale."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from shadoc.errors import ShapeError
from shadoc.imaging.image import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float

    def format(self, name: str) -> str:
        return f"{name} psnr={self.psnr:.4f} ssim={self.ssim:.4f} rmse={self.rmse:.4f}"


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-d Gaussian taps; the 2-d window is the outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _pixels(img) -> np.ndarray:
    px = img.pixels if isinstance(img, Image) else np.asarray(img)
    if px.ndim == 2:
        px = px[:, :, None]
    return px.astype(np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    return pa, pb


def rmse(a, b) -> float:
    pa, pb = _pair(a, b)
    d = pa - pb
    return math.sqrt(float(np.mean(d * d)))


def psnr_from_rmse(e: float) -> float:
    return math.inf if e == 0 else 20.0 * math.log10(255.0 / e)


def psnr(a, b) -> float:
    return psnr_from_rmse(rmse(a, b))


def _filter_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-region filtering of an H x W array."""
    k = len(taps)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ taps


def ssim(a, b, data_range: float = 255.0) -> float:
    """Mean SSIM per channel, averaged over channels (valid windowing, no padding)."""
    pa, pb = _pair(a, b)
    h, w = pa.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    taps = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    scores = []
    for ch in range(pa.shape[2]):
        x, y = pa[:, :, ch], pb[:, :, ch]
        mx, my = _filter_valid(x, taps), _filter_valid(y, taps)
        sxx = _filter_valid(x * x, taps) - mx * mx
        syy = _filter_valid(y * y, taps) - my * my
        sxy = _filter_valid(x * y, taps) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def evaluate(a, b) -> MetricReport:
    e = rmse(a, b)
    return MetricReport(psnr=psnr_from_rmse(e), ssim=ssim(a, b), rmse=e)
