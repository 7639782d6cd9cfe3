"""Full pipeline: Otsu prior -> shadow detector -> cascaded fusion refiner."""

from __future__ import annotations

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import Tensor
from shadoc.cfr import CascadedFusionRefiner, crop, padding_for
from shadoc.config import ModelConfig
from shadoc.std import ShadowDetector, otsu_prior_tensor


class ShaDocFormer(CascadedFusionRefiner):
    """Refiner plus the optional shadow detector branch.

    Parameters live under ``std.*`` (detector) and ``embed.*``, ``enc.*``,
    ``agg.*``, ``spp.*``, ``dec.*``, ``refine.*`` (refiner).
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        if config.use_std:
            std = ShadowDetector(config.std_channels, config.std_blocks, config.heads, rng, config.dgfn_expansion)
        else:
            std = None
        super().__init__(config, rng)
        self.std = std

    def named_parameters(self, prefix: str = ""):
        if self.std is not None:
            yield from self.std.named_parameters(prefix + "std.")
        for name, p in super().named_parameters(prefix):
            if not name.startswith(prefix + "std."):
                yield name, p

    def shadow_mask(self, padded: Tensor, prior: Tensor) -> Tensor:
        if self.std is None:
            return Tensor(np.ones((padded.shape[0], 1) + padded.shape[-2:]))
        return self.std(padded, prior)

    def forward(self, image: Tensor, clamp: bool = True) -> tuple[Tensor, Tensor]:
        """Return (restored image, soft shadow mask), both at the input extents."""
        h, w = image.shape[-2:]
        pad = padding_for(h, w)
        padded = F.pad_reflect(image, pad)
        prior = F.pad_reflect(otsu_prior_tensor(image), pad) if self.std is not None else None
        mask = self.shadow_mask(padded, prior)
        out = crop(padded + self.residual(padded, mask), h, w)
        if clamp:
            out = F.clamp(out, 0.0, 1.0)
        return out, crop(mask, h, w)
