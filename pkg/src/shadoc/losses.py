"""Composite restoration objective: MSE + 0.3 * (1 - SSIM) + 0.7 * perceptual."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import Tensor
from shadoc.errors import ConfigError, ShapeError
from shadoc.imaging.metrics import SSIM_K1, SSIM_K2, SSIM_WINDOW, gaussian_window

PERCEPTUAL_SEED = 1979
PERCEPTUAL_CHANNELS = (8, 16, 32)


@dataclass(frozen=True)
class LossWeights:
    w_mse: float = 1.0
    w_ssim: float = 0.3
    w_p: float = 0.7

    def __post_init__(self):
        if min(self.w_mse, self.w_ssim, self.w_p) < 0:
            raise ConfigError(f"loss weights must be >= 0, got {self}")


def _check(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check(pred, target)
    d = pred - target
    return F.mean(d * d)


@lru_cache(maxsize=8)
def _ssim_kernel(channels: int) -> np.ndarray:
    g = gaussian_window()
    return np.broadcast_to(np.outer(g, g), (channels, 1, SSIM_WINDOW, SSIM_WINDOW)).copy()


def ssim_index(pred: Tensor, target: Tensor) -> Tensor:
    """Differentiable mean SSIM on unit-scale tensors (valid Gaussian windows)."""
    _check(pred, target)
    n, c, h, w = pred.shape
    if min(h, w) < SSIM_WINDOW:
        raise ShapeError(f"SSIM loss needs extents >= {SSIM_WINDOW}, got {h}x{w}")
    kernel = Tensor(_ssim_kernel(c))

    def blur(t):
        return F.conv2d(t, kernel, groups=c)

    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = blur(pred), blur(target)
    mxx, myy, mxy = mx * mx, my * my, mx * my
    sxx = blur(pred * pred) - mxx
    syy = blur(target * target) - myy
    sxy = blur(pred * target) - mxy
    num = (2.0 * mxy + c1) * (2.0 * sxy + c2)
    den = (mxx + myy + c1) * (sxx + syy + c2)
    return F.mean(num / den)


def ssim_loss(pred: Tensor, target: Tensor) -> Tensor:
    return 1.0 - ssim_index(pred, target)


class PerceptualExtractor:
    """Frozen, seeded 3-stage conv pyramid (stride-2 3x3 convs, GELU).

    The weights never receive gradients; they are serialized under ``perc.*``
    so a checkpoint records exactly which extractor produced its loss values.
    """

    def __init__(self, seed: int = PERCEPTUAL_SEED, channels=PERCEPTUAL_CHANNELS, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.weights: list[tuple[np.ndarray, np.ndarray]] = []
        cin = in_channels
        for cout in channels:
            bound = np.sqrt(6.0 / (cin * 9))  # He-uniform keeps feature scale stable through GELU
            w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(np.float32)
            b = rng.uniform(-0.1, 0.1, size=cout).astype(np.float32)
            self.weights.append((w, b))
            cin = cout

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(self.weights):
            out += [(f"perc.stage{i}.weight", w), (f"perc.stage{i}.bias", b)]
        return out

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        for w, b in self.weights:
            x = F.gelu(F.conv2d(x, Tensor(w), Tensor(b), stride=2, padding=1))
            feats.append(x)
        return feats


@lru_cache(maxsize=1)
def default_extractor() -> PerceptualExtractor:
    return PerceptualExtractor()


def perceptual_loss(pred: Tensor, target: Tensor, extractor: PerceptualExtractor | None = None) -> Tensor:
    """Mean squared distance of channel-normalized features, averaged over stages."""
    _check(pred, target)
    extractor = extractor or default_extractor()
    terms = []
    for fp, ft in zip(extractor.features(pred), extractor.features(target)):
        d = F.l2_normalize(fp, axis=1) - F.l2_normalize(ft, axis=1)
        terms.append(F.mean(d * d))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    ssim: float
    perc: float
    total: float

    def log_line(self, step: int) -> str:
        return (f"step={step} mse={self.mse:.10f} ssim={self.ssim:.10f} "
                f"perc={self.perc:.10f} total={self.total:.10f}")


def total_loss(pred: Tensor, target: Tensor, weights: LossWeights = LossWeights(),
               extractor: PerceptualExtractor | None = None) -> tuple[Tensor, LossBreakdown]:
    l_mse = mse_loss(pred, target)
    l_ssim = ssim_loss(pred, target)
    l_p = perceptual_loss(pred, target, extractor)
    total = weights.w_mse * l_mse + weights.w_ssim * l_ssim + weights.w_p * l_p
    # reported total re-evaluates the weighted sum on the reported components,
    # so the logged parts add up exactly rather than to float32 rounding
    mse, ssim, perc = l_mse.item(), l_ssim.item(), l_p.item()
    reported = weights.w_mse * mse + weights.w_ssim * ssim + weights.w_p * perc
    return total, LossBreakdown(mse, ssim, perc, reported)
