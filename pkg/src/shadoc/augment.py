"""Paired augmentation: resize jitter, random crop, horizontal flip, mixup.

Every geometric transform is drawn once and applied to the shadowed input and
the clean target alike, so pairs never fall out of registration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from shadoc.autodiff.functional import bilinear_matrix
from shadoc.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class SamplePair:
    """Shadowed input and shadow-free target, H x W x 3 float32 in [0, 1]."""

    name: str
    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ShapeError(f"pair '{self.name}': input {self.input.shape} vs target {self.target.shape}")


@dataclass(frozen=True)
class Transform:
    out_h: int
    out_w: int
    top: int
    left: int
    crop_h: int
    crop_w: int
    flip: bool

    def apply(self, img: np.ndarray) -> np.ndarray:
        h, w = img.shape[:2]
        if (self.out_h, self.out_w) != (h, w):
            img = resize_array(img, self.out_h, self.out_w)
        img = img[self.top:self.top + self.crop_h, self.left:self.left + self.crop_w]
        if self.flip:
            img = img[:, ::-1]
        return np.ascontiguousarray(img, dtype=np.float32)


def resize_array(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of an H x W x C array."""
    ry = bilinear_matrix(out_h, img.shape[0])
    rx = bilinear_matrix(out_w, img.shape[1])
    out = np.einsum("ih,hwc,jw->ijc", ry, img.astype(np.float64), rx)
    return out.astype(np.float32)


def flip_pair(pair: SamplePair) -> SamplePair:
    return SamplePair(pair.name, np.ascontiguousarray(pair.input[:, ::-1]),
                      np.ascontiguousarray(pair.target[:, ::-1]))


def draw_transform(h: int, w: int, rng: np.random.Generator, crop: int,
                   flip_p: float = 0.5, scale_range: tuple[float, float] = (0.8, 1.2)) -> Transform:
    """Draw scale, crop window and flip decision. ``crop=0`` keeps the full frame.

    The lower scale bound is raised when needed so the rescaled page still
    covers the crop window.
    """
    lo, hi = scale_range
    if crop > 0:
        if crop > round(min(h, w) * hi):
            raise ConfigError(f"crop {crop} exceeds image extent {h}x{w} at maximum scale {hi}")
        lo = min(hi, max(lo, crop / min(h, w)))
    s = rng.uniform(lo, hi) if hi > lo else lo
    out_h, out_w = max(1, int(round(h * s))), max(1, int(round(w * s)))
    ch, cw = (crop, crop) if crop > 0 else (out_h, out_w)
    out_h, out_w = max(out_h, ch), max(out_w, cw)
    top = int(rng.integers(0, out_h - ch + 1))
    left = int(rng.integers(0, out_w - cw + 1))
    flip = bool(rng.random() < flip_p)
    return Transform(out_h, out_w, top, left, ch, cw, flip)


def augment(pair: SamplePair, rng: np.random.Generator, crop: int, flip_p: float = 0.5,
            scale_range: tuple[float, float] = (0.8, 1.2)) -> SamplePair:
    h, w = pair.input.shape[:2]
    t = draw_transform(h, w, rng, crop, flip_p, scale_range)
    return SamplePair(pair.name, t.apply(pair.input), t.apply(pair.target))


def mixup(a: SamplePair, b: SamplePair, lam: float) -> SamplePair:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixup lambda must be in [0, 1], got {lam}")
    if a.input.shape != b.input.shape:
        raise ShapeError(f"mixup needs equal extents, got {a.input.shape} and {b.input.shape}")
    if lam == 1.0:
        return a
    mix = lambda x, y: (lam * x.astype(np.float64) + (1.0 - lam) * y).astype(np.float32)  # noqa: E731
    return SamplePair(f"{a.name}+{b.name}", mix(a.input, b.input), mix(a.target, b.target))
