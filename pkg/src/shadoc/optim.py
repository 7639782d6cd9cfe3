from __future__ import annotations

import numpy as np

from shadoc.autodiff.tensor import Tensor
from shadoc.errors import TapeStateError


class Adam:
    """Bias-corrected Adam; updates parameters in place.

    Parameters are addressed by name so moment buffers can be checkpointed.
    A missing gradient counts as zero.
    """

    def __init__(self, named_params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: dict[str, Tensor] = dict(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=np.float64) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.shape, dtype=np.float64) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
            if g.shape != p.shape:
                raise TapeStateError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("adam.t", np.array([self.t], dtype=np.float32))]
        for name in self.params:
            out.append((f"adam.m.{name}", self.m[name].astype(np.float32)))
            out.append((f"adam.v.{name}", self.v[name].astype(np.float32)))
        return out

    def load_state(self, entries: dict[str, np.ndarray]) -> None:
        if "adam.t" not in entries:
            return
        self.t = int(entries["adam.t"][0])
        for name, p in self.params.items():
            for buf, key in ((self.m, f"adam.m.{name}"), (self.v, f"adam.v.{name}")):
                if key in entries:
                    if entries[key].shape != p.shape:
                        raise TapeStateError(f"{key} has shape {entries[key].shape}, parameter has {p.shape}")
                    buf[name] = entries[key].astype(np.float64)
