"""Otsu's global threshold on 8-bit intensities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from shadoc.imaging.image import Image, to_grayscale


@dataclass(frozen=True)
class OtsuResult:
    threshold: int
    between_class_variance: float
    omega0: float
    omega1: float
    mu0: float
    mu1: float


def variance_ratio(n0: int, s0: int, n1: int, s1: int) -> tuple[int, int]:
    """sigma_b^2 as an exact integer fraction (num, den).

    With N = n0 + n1, w0 * w1 * (m0 - m1)^2 = (s0*n1 - s1*n0)^2 / (N^2 * n0 * n1).
    An empty class gives (0, 1).
    """
    if n0 == 0 or n1 == 0:
        return 0, 1
    total = n0 + n1
    return (s0 * n1 - s1 * n0) ** 2, total * total * n0 * n1


def between_class_variance(n0: int, s0: int, n1: int, s1: int) -> float:
    """sigma_b^2 from integer class counts and intensity sums, correctly rounded."""
    num, den = variance_ratio(n0, s0, n1, s1)
    return num / den


def _intensities(gray) -> np.ndarray:
    px = gray.pixels if isinstance(gray, Image) else np.asarray(gray)
    if px.ndim == 3:
        if px.shape[2] != 1:
            raise ValueError("otsu_threshold needs a single-channel image")
        px = px[:, :, 0]
    return px.astype(np.uint8, copy=False)


def otsu_threshold(gray) -> OtsuResult:
    """Scan all 256 cuts (class 0 = pixels <= t) and keep the smallest maximizer."""
    px = _intensities(gray)
    hist = np.bincount(px.reshape(-1), minlength=256).astype(np.int64)
    counts0 = np.cumsum(hist)
    sums0 = np.cumsum(hist * np.arange(256, dtype=np.int64))
    total, total_sum = int(counts0[-1]), int(sums0[-1])

    # exact comparisons, so ties are real ties and the smallest t wins
    best_t, best_num, best_den = 0, 0, 1
    for t in range(256):
        n0, s0 = int(counts0[t]), int(sums0[t])
        num, den = variance_ratio(n0, s0, total - n0, total_sum - s0)
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    n0, s0 = int(counts0[best_t]), int(sums0[best_t])
    n1, s1 = total - n0, total_sum - s0
    return OtsuResult(
        threshold=best_t,
        between_class_variance=best_num / best_den,
        omega0=n0 / total,
        omega1=n1 / total,
        mu0=s0 / n0 if n0 else 0.0,
        mu1=s1 / n1 if n1 else 0.0,
    )


def binarize(gray, t: int) -> np.ndarray:
    """H x W x 1 float32 mask: 1 where intensity <= t (dark side), else 0."""
    if not 0 <= t <= 255:
        raise ValueError(f"threshold {t} outside [0, 255]")
    px = _intensities(gray)
    return (px <= t).astype(np.float32)[:, :, None]


def otsu_prior(image) -> np.ndarray:
    """Binary shadow prior: grayscale, Otsu threshold, binarize.

    A single-class image (no cut separates anything) yields an all-zero mask.
    Accepts an :class:`Image` or an H x W x C uint8 array.
    """
    img = image if isinstance(image, Image) else Image(np.asarray(image))
    gray = to_grayscale(img)
    res = otsu_threshold(gray)
    if res.between_class_variance == 0.0:
        return np.zeros((img.height, img.width, 1), dtype=np.float32)
    return binarize(gray, res.threshold)
