"""Cascaded fusion refiner: U-shaped encoder/decoder with aggregation, SPP and refinement."""

from __future__ import annotations

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import Tensor
from shadoc.blocks import SPP, CDGFBlock, ConvResidualBlock, TransformerBlock
from shadoc.config import ModelConfig
from shadoc.errors import ShapeError
from shadoc.nn import Conv2d, Module, ModuleList

PAD_MULTIPLE = 8


class PatchEmbed(Module):
    """Overlapping 3x3 patches over [R, G, B, mask] -> base_channels features."""

    def __init__(self, cin: int, channels: int, rng: np.random.Generator):
        super().__init__()
        self.cin = cin
        self.conv = Conv2d(cin, channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cin:
            raise ShapeError(f"patch embed expects {self.cin} input channels on axis 1, got {x.shape[1]}")
        return F.gelu(self.conv(x))


class EncoderLevel(Module):
    def __init__(self, channels: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        if config.use_cdgf:
            blocks = (CDGFBlock(channels, rng) for _ in range(config.blocks_per_level))
        else:
            blocks = (ConvResidualBlock(channels, rng) for _ in range(config.blocks_per_level))
        self.blocks = ModuleList(blocks)
        self.down = Conv2d(channels, 2 * channels, 3, rng, stride=2)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        for block in self.blocks:
            x = block(x)
        return x, self.down(x)


class Encoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c = config.base_channels
        self.levels = ModuleList(EncoderLevel(c * 2 ** i, config, rng) for i in range(config.levels))

    def forward(self, x: Tensor) -> list[Tensor]:
        """Feature pyramid [e0, e1, e2, bottleneck] at strides 1, 2, 4, 8."""
        h, w = x.shape[-2:]
        if h % PAD_MULTIPLE or w % PAD_MULTIPLE:
            raise ShapeError(f"encoder needs extents divisible by {PAD_MULTIPLE}, got {h}x{w}")
        pyramid = []
        for level in self.levels:
            feat, x = level(x)
            pyramid.append(feat)
        pyramid.append(x)
        return pyramid


class Aggregator(Module):
    """Resize every encoder level to the bottleneck grid, project to its width,
    sum with the bottleneck and fuse with a 3x3 conv."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c = config.base_channels
        top = c * 2 ** config.levels
        self.project = ModuleList(Conv2d(c * 2 ** i, top, 1, rng, bias=False) for i in range(config.levels))
        self.fuse = Conv2d(top, top, 3, rng)

    def forward(self, pyramid: list[Tensor]) -> Tensor:
        bottleneck = pyramid[-1]
        h, w = bottleneck.shape[-2:]
        total = bottleneck
        for feat, proj in zip(pyramid[:-1], self.project):
            total = total + proj(F.resize_bilinear(feat, h, w))
        return self.fuse(total)


class DecoderStage(Module):
    def __init__(self, channels: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        half = channels // 2
        self.up = Conv2d(channels, half, 3, rng)
        self.blocks = ModuleList(TransformerBlock(half, config.heads, rng, config.dgfn_expansion)
                                 for _ in range(config.blocks_per_level))

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        x = self.up(F.resize_bilinear(x, 2 * h, 2 * w))
        if x.shape != skip.shape:
            raise ShapeError(f"decoder skip mismatch: upsampled {x.shape} vs encoder {skip.shape}")
        x = x + skip
        for block in self.blocks:
            x = block(x)
        return x


class Decoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c = config.base_channels
        self.stages = ModuleList(DecoderStage(c * 2 ** i, config, rng) for i in range(config.levels, 0, -1))

    def forward(self, x: Tensor, pyramid: list[Tensor]) -> Tensor:
        skips = pyramid[:-1][::-1]
        if len(skips) != len(self.stages):
            raise ShapeError(f"pyramid has {len(skips)} skip levels, decoder expects {len(self.stages)}")
        for stage, skip in zip(self.stages, skips):
            x = stage(x, skip)
        return x


class Refine(Module):
    """Final transformer block and a zero-initialized 3x3 conv to RGB."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c = config.base_channels
        self.block = TransformerBlock(c, config.heads, rng, config.dgfn_expansion)
        self.out = Conv2d(c, 3, 3, rng, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.out(self.block(x))


def padding_for(h: int, w: int, multiple: int = PAD_MULTIPLE) -> tuple[int, int, int, int]:
    return (0, -w % multiple, 0, -h % multiple)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    if x.shape[-2:] == (h, w):
        return x
    return F.index(x, (slice(None), slice(None), slice(0, h), slice(0, w)))


class CascadedFusionRefiner(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c = config.base_channels
        self.embed = PatchEmbed(4, c, rng)
        self.enc = Encoder(config, rng)
        if config.use_aggregation:
            self.agg = Aggregator(config, rng)
        else:
            self.agg = None
        self.spp = SPP(c * 2 ** config.levels, config.spp_scales, rng)
        self.dec = Decoder(config, rng)
        self.refine = Refine(config, rng)

    def residual(self, image: Tensor, mask: Tensor) -> Tensor:
        """Predicted correction for an image whose extents are already multiples of 8."""
        pyramid = self.enc(self.embed(F.concat([image, mask], axis=1)))
        x = self.agg(pyramid) if self.agg is not None else pyramid[-1]
        x = self.spp(x, clip_scales=True)
        return self.refine(self.dec(x, pyramid))

    def forward(self, image: Tensor, mask: Tensor, clamp: bool = True) -> Tensor:
        """Shadow-free estimate with the same extents as ``image``.

        Inputs are reflect-padded to a multiple of 8 and the result cropped
        back. With ``clamp=False`` the pre-clamp value is returned.
        """
        h, w = image.shape[-2:]
        if mask.shape[-2:] != (h, w):
            raise ShapeError(f"mask extents {mask.shape[-2:]} differ from image extents {(h, w)}")
        pad = padding_for(h, w)
        img_p, mask_p = F.pad_reflect(image, pad), F.pad_reflect(mask, pad)
        out = crop(img_p + self.residual(img_p, mask_p), h, w)
        return F.clamp(out, 0.0, 1.0) if clamp else out
