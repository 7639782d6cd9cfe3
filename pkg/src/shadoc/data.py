"""Paired-directory datasets: ``<dir>/input/<name>`` matched with ``<dir>/target/<name>``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from shadoc.augment import SamplePair, resize_array
from shadoc.errors import DataError
from shadoc.imaging.image import Image, load_image

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm"}


def _images(d: Path) -> list[str]:
    return sorted(p.name for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def match_files(a_dir: Path, b_dir: Path) -> list[str]:
    """Names present in both directories; any unpaired file raises DataError naming it."""
    for d in (a_dir, b_dir):
        if not d.is_dir():
            raise DataError(f"missing directory: {d}")
    a, b = _images(a_dir), _images(b_dir)
    sb, sa = set(b), set(a)
    for name in a:
        if name not in sb:
            raise DataError(f"unpaired file: {a_dir / name} has no counterpart in {b_dir}")
    for name in b:
        if name not in sa:
            raise DataError(f"unpaired file: {b_dir / name} has no counterpart in {a_dir}")
    return a


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    names: tuple[str, ...]

    @classmethod
    def discover(cls, root: str | Path) -> DatasetIndex:
        root = Path(root)
        names = match_files(root / "input", root / "target")
        if not names:
            raise DataError(f"no image pairs under {root}")
        return cls(root, tuple(names))

    def __len__(self) -> int:
        return len(self.names)

    def paths(self, i: int) -> tuple[Path, Path]:
        name = self.names[i]
        return self.root / "input" / name, self.root / "target" / name

    def load(self, resize: int = 0) -> list[SamplePair]:
        pairs = []
        for i, name in enumerate(self.names):
            inp, tgt = (_as_rgb(load_image(p)) for p in self.paths(i))
            if inp.shape != tgt.shape:
                raise DataError(f"pair '{name}': input {inp.shape} and target {tgt.shape} differ in size")
            if resize:
                inp, tgt = resize_array(inp, resize, resize), resize_array(tgt, resize, resize)
            pairs.append(SamplePair(name, inp, tgt))
        return pairs


def _as_rgb(img: Image) -> np.ndarray:
    f = img.to_float()
    return np.repeat(f, 3, axis=2) if img.channels == 1 else f
