"""Shadow-attentive threshold detector: Otsu prior + conv/transformer features -> soft mask."""

from __future__ import annotations

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import Tensor
from shadoc.blocks import TransformerBlock
from shadoc.errors import ShapeError
from shadoc.imaging.image import quantize
from shadoc.imaging.otsu import otsu_prior
from shadoc.nn import Conv2d, Module, ModuleList


def otsu_prior_tensor(image: Tensor) -> Tensor:
    """Binary prior [1, 1, H, W] for a unit-scale [1, 3, H, W] image.

    The image is quantized to 8 bits first; the result is a constant input
    (no gradient flows through thresholding).
    """
    px = quantize(np.transpose(image.data[0], (1, 2, 0)))
    mask = otsu_prior(px)
    return Tensor(np.transpose(mask, (2, 0, 1))[None])


class ShadowDetector(Module):
    """Stem convs on [R, G, B, prior], attention at quarter resolution,
    bilinear upsampling with skips, 1x1 head and sigmoid."""

    def __init__(self, channels: int, blocks: int, heads: int, rng: np.random.Generator, expansion: int = 2):
        super().__init__()
        c = channels
        self.stem1 = Conv2d(4, c, 3, rng)
        self.stem2 = Conv2d(c, c, 3, rng)
        self.down1 = Conv2d(c, c, 3, rng, stride=2)
        self.down2 = Conv2d(c, c, 3, rng, stride=2)
        self.blocks = ModuleList(TransformerBlock(c, heads, rng, expansion) for _ in range(blocks))
        self.up1 = Conv2d(c, c, 3, rng)
        self.up2 = Conv2d(c, c, 3, rng)
        self.head = Conv2d(c, 1, 1, rng)

    def forward(self, image: Tensor, prior: Tensor) -> Tensor:
        n, _, h, w = image.shape
        if h % 4 or w % 4:
            raise ShapeError(f"shadow detector needs extents divisible by 4, got {h}x{w} (pad first)")
        if prior.shape != (n, 1, h, w):
            raise ShapeError(f"prior shape {prior.shape} does not match image extents {(n, 1, h, w)}")
        s = F.gelu(self.stem2(F.gelu(self.stem1(F.concat([image, prior], axis=1)))))
        d1 = F.gelu(self.down1(s))
        d = F.gelu(self.down2(d1))
        for block in self.blocks:
            d = block(d)
        u = F.gelu(self.up1(F.resize_bilinear(d, h // 2, w // 2))) + d1
        u = F.gelu(self.up2(F.resize_bilinear(u, h, w))) + s
        return F.sigmoid(self.head(u))
