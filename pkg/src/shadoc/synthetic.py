"""Synthetic document pages with shadow bands, used for fixtures and smoke training."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from shadoc.imaging.image import Image, save_image

# (page RGB, band slice rows or cols, orientation, shadow attenuation)
FIXTURE_SPECS = (
    ((232, 228, 218), (20, 38), "horizontal", 0.45),
    ((214, 220, 230), (36, 52), "vertical", 0.55),
)


def two_level_page(h: int, w: int, page: int = 230, shadow: int = 90, band=(8, 16)) -> np.ndarray:
    """Grayscale-valued RGB page with a horizontal band of uniform darker intensity."""
    img = np.full((h, w, 3), page, dtype=np.uint8)
    img[band[0]:band[1]] = shadow
    return img


def shadow_pair(size: int, page_rgb, band, orientation: str, attenuation: float) -> tuple[np.ndarray, np.ndarray]:
    """(shadowed, clean) uint8 pages; the shadow scales the page colour by ``attenuation``."""
    clean = np.empty((size, size, 3), dtype=np.uint8)
    clean[:] = np.asarray(page_rgb, dtype=np.uint8)
    shadowed = clean.copy()
    region = (slice(band[0], band[1]), slice(None)) if orientation == "horizontal" else (slice(None), slice(band[0], band[1]))
    shadowed[region] = np.rint(clean[region].astype(np.float64) * attenuation).astype(np.uint8)
    return shadowed, clean


def fixture_pairs(size: int = 64) -> list[tuple[str, np.ndarray, np.ndarray]]:
    out = []
    for i, (rgb, band, orient, att) in enumerate(FIXTURE_SPECS):
        lo, hi = (int(round(b * size / 64)) for b in band)
        shadowed, clean = shadow_pair(size, rgb, (lo, hi), orient, att)
        out.append((f"page{i}.png", shadowed, clean))
    return out


def write_fixture_dataset(root: str | Path, size: int = 64) -> Path:
    """Write ``input/`` and ``target/`` PNGs for the two synthetic pairs."""
    root = Path(root)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "target").mkdir(parents=True, exist_ok=True)
    for name, shadowed, clean in fixture_pairs(size):
        save_image(Image(shadowed), root / "input" / name)
        save_image(Image(clean), root / "target" / name)
    return root
