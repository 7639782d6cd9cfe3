"""Minimal module system: named parameter registration and a few layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from shadoc.autodiff import functional as F
from shadoc.autodiff.tensor import Tensor


def Parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Base class; Tensor attributes with ``requires_grad`` and child modules
    are registered in assignment order, which fixes checkpoint entry order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, *,
                 stride: int = 1, padding: int | None = None, groups: int = 1,
                 bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        shape = (cout, cin // groups, kernel, kernel)
        if zero_init:
            self.weight = Parameter(np.zeros(shape))
        else:
            bound = 1.0 / math.sqrt(shape[1] * kernel * kernel)
            self.weight = Parameter(rng.uniform(-bound, bound, size=shape))
        if bias:
            self.bias = Parameter(np.zeros(cout))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class LayerNorm2d(Module):
    """Per-pixel normalization across channels of an N x C x H x W map."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps, axis=1)
