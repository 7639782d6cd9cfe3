from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from shadoc.errors import ShapeError
from shadoc.imaging import codec

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class Image:
    """8-bit raster, H x W x C with C in {1, 3} (R, G, B order)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ShapeError(f"image must be H x W x {{1,3}}, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ShapeError(f"image pixels must be uint8, got {px.dtype}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def to_float(self) -> np.ndarray:
        """Unit-interval float32 copy."""
        return self.pixels.astype(np.float32) / np.float32(255.0)

    @classmethod
    def from_float(cls, arr: np.ndarray) -> Image:
        return cls(quantize(arr))


def quantize(arr: np.ndarray) -> np.ndarray:
    """Unit-interval floats to uint8 by rounding (values are clipped first)."""
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_image(path: str | Path) -> Image:
    return Image(codec.read_pixels(path))


def save_image(image: Image, path: str | Path) -> None:
    codec.write_pixels(image.pixels, path)


def luma(pixels: np.ndarray) -> np.ndarray:
    """BT.601 luma of an H x W x 3 uint8 array, rounded to uint8."""
    rgb = pixels.astype(np.float64)
    y = rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def to_grayscale(image: Image) -> Image:
    if image.channels == 1:
        return image
    return Image(luma(image.pixels)[:, :, None])
