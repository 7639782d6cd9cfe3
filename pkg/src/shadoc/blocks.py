"""Building blocks shared by the shadow detector and the refiner."""

from __future__ import annotations

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import Tensor
from shadoc.errors import ConfigError
from shadoc.nn import Conv2d, LayerNorm2d, Module, ModuleList, Parameter


class CDGFBlock(Module):
    """Convolutional depthwise grouped fusion block.

    norm -> 1x1 expand -> 3x3 depthwise -> split-half gate -> pooled channel
    attention -> 1x1 project -> learnable per-channel scale -> residual.
    The scale starts at zero so a fresh block is the identity.
    """

    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 2):
        super().__init__()
        inner = channels * expansion
        if inner % 2:
            raise ConfigError(f"CDGF expansion channel count {inner} must be even for the split gate")
        half = inner // 2
        self.norm = LayerNorm2d(channels)
        self.expand = Conv2d(channels, inner, 1, rng)
        self.dw = Conv2d(inner, inner, 3, rng, groups=inner)
        self.attn = Conv2d(half, half, 1, rng)
        self.project = Conv2d(half, channels, 1, rng)
        self.gamma = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        y = self.dw(self.expand(self.norm(x)))
        a, b = F.split(y, 2, axis=1)
        y = a * b
        y = y * self.attn(F.adaptive_avg_pool(y, 1, 1))
        y = self.project(y)
        return x + y * F.reshape(self.gamma, (1, -1, 1, 1))


class ConvResidualBlock(Module):
    """Plain 3x3 conv residual block, used when CDGF is ablated."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(F.gelu(self.conv1(x)))


class ChannelAttention(Module):
    """Multi-head attention across channels (transposed attention).

    Each head attends over its c/heads channels; the attention matrix is
    (c/heads)^2 so cost grows linearly with the pixel count.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or channels % heads:
            raise ConfigError(f"heads={heads} must divide channels={channels}")
        self.heads = heads
        self.norm = LayerNorm2d(channels)
        self.qkv = Conv2d(channels, 3 * channels, 1, rng)
        self.temperature = Parameter(np.ones(heads))
        self.project = Conv2d(channels, channels, 1, rng)

    def attention(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (attention weights [n, heads, d, d], values [n, heads, d, h*w])."""
        n, c, h, w = x.shape
        d = c // self.heads
        q, k, v = F.split(self.qkv(self.norm(x)), 3, axis=1)
        q = F.l2_normalize(F.reshape(q, (n, self.heads, d, h * w)), axis=-1)
        k = F.l2_normalize(F.reshape(k, (n, self.heads, d, h * w)), axis=-1)
        v = F.reshape(v, (n, self.heads, d, h * w))
        logits = F.matmul(q, F.transpose(k, (0, 1, 3, 2)))
        logits = logits * F.reshape(self.temperature, (1, self.heads, 1, 1))
        return F.softmax(logits, axis=-1), v

    def forward(self, x: Tensor) -> Tensor:
        attn, v = self.attention(x)
        out = F.reshape(F.matmul(attn, v), x.shape)
        return x + self.project(out)


class DGFN(Module):
    """Dual gated feed-forward: two depthwise branches, each gating the other."""

    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 2):
        super().__init__()
        inner = channels * expansion
        self.norm = LayerNorm2d(channels)
        self.expand = Conv2d(channels, 2 * inner, 1, rng)
        self.dw = Conv2d(2 * inner, 2 * inner, 3, rng, groups=2 * inner)
        self.project = Conv2d(inner, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        b1, b2 = F.split(self.dw(self.expand(self.norm(x))), 2, axis=1)
        gated = F.gelu(b1) * b2 + F.gelu(b2) * b1
        return x + self.project(gated)


class TransformerBlock(Module):
    def __init__(self, channels: int, heads: int, rng: np.random.Generator, expansion: int = 2):
        super().__init__()
        self.attn = ChannelAttention(channels, heads, rng)
        self.ffn = DGFN(channels, rng, expansion)

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.attn(x))


class SPP(Module):
    """Spatial pyramid pooling: pooled branches projected, upsampled and fused back."""

    def __init__(self, channels: int, scales, rng: np.random.Generator):
        super().__init__()
        self.scales = tuple(int(s) for s in scales)
        if not self.scales or list(self.scales) != sorted(self.scales) or self.scales[0] < 1:
            raise ConfigError(f"SPP scales must be positive and sorted ascending, got {self.scales}")
        branch = channels // len(self.scales)
        if branch < 1:
            raise ConfigError(f"SPP needs at least {len(self.scales)} channels, got {channels}")
        self.branches = ModuleList(Conv2d(channels, branch, 1, rng) for _ in self.scales)
        self.fuse = Conv2d(channels + branch * len(self.scales), channels, 1, rng)

    def forward(self, x: Tensor, clip_scales: bool = False) -> Tensor:
        """With ``clip_scales`` a scale larger than the map is reduced to the map
        extent instead of raising; the parameter set is unaffected."""
        h, w = x.shape[-2:]
        feats = [x]
        for s, conv in zip(self.scales, self.branches):
            if s > min(h, w):
                if not clip_scales:
                    raise ConfigError(f"SPP scale {s} exceeds feature extent {h}x{w}")
                sh, sw = min(s, h), min(s, w)
            else:
                sh = sw = s
            pooled = conv(F.adaptive_avg_pool(x, sh, sw))
            feats.append(F.resize_bilinear(pooled, h, w))
        return x + self.fuse(F.concat(feats, axis=1))
