"""Tensor container and the gradient tape that records operations for reverse mode."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from shadoc.errors import ContractError, NonFiniteError, TapeStateError

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_dtype() -> np.dtype:
    """Storage dtype for newly created tensors (float32 unless overridden)."""
    return _get("dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the storage dtype, e.g. ``precision(np.float64)`` for gradient checks."""
    old = get_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def debug_enabled() -> bool:
    return _get("debug", False)


@contextlib.contextmanager
def debug_checks(enabled: bool = True) -> Iterator[None]:
    """Raise :class:`NonFiniteError` naming the first op that emits NaN/Inf."""
    old = debug_enabled()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = old


def _tape_stack() -> list:
    stack = _get("tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def current_tape() -> GradTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, even inside an active tape."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """Dense n-d float array with optional gradient tracking.

    Feature maps use the N x C x H x W layout. ``data`` is a numpy array in
    the storage dtype; ``grad`` is filled by :meth:`GradTape.backward` for
    leaves that have ``requires_grad`` set.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_is_leaf", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: GradTape | None = None
        self._is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ContractError("tensor was not produced under a GradTape")
        self._tape.backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the implementations live in functional.py
    def __add__(self, other):
        from shadoc.autodiff import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from shadoc.autodiff import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from shadoc.autodiff import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from shadoc.autodiff import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from shadoc.autodiff import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from shadoc.autodiff import functional as F
        return F.div(other, self)

    def __neg__(self):
        from shadoc.autodiff import functional as F
        return F.neg(self)

    def __pow__(self, p):
        from shadoc.autodiff import functional as F
        return F.power(self, p)

    def __matmul__(self, other):
        from shadoc.autodiff import functional as F
        return F.matmul(self, other)

    def __getitem__(self, idx):
        from shadoc.autodiff import functional as F
        return F.index(self, idx)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class GradTape:
    """Ordered record of executed operations.

    Use as a context manager; every op whose inputs require gradients is
    appended while the tape is active. :meth:`backward` replays the records in
    reverse order exactly once::

        with GradTape() as tape:
            loss = F.sum(x * x)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._leaves: dict[int, Tensor] = {}
        self._outputs: set[int] = set()

    def __enter__(self) -> GradTape:
        if self.consumed:
            raise TapeStateError("cannot re-enter a consumed tape")
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        if self.consumed:
            raise TapeStateError("cannot record onto a consumed tape")
        for t in inputs:
            if t.requires_grad and t._is_leaf:
                self._leaves[id(t)] = t
        output.requires_grad = True
        output._is_leaf = False
        output._tape = self
        self._outputs.add(id(output))
        self.nodes.append(_Node(op, inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Fill ``.grad`` of every requires_grad leaf reachable from ``loss``.

        Leaves that took part in recorded ops but do not influence ``loss``
        receive zero gradients. Gradients accumulate into existing buffers.
        """
        if self.consumed:
            raise TapeStateError("tape already consumed by a previous backward pass")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise ContractError("loss was not produced under this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=inp.data.dtype)
                if gi.shape != inp.shape:
                    raise ContractError(f"{node.op}: gradient shape {gi.shape} != input shape {inp.shape}")
                if inp._is_leaf:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    grads[key] = gi if key not in grads else grads[key] + gi

        for leaf in self._leaves.values():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        self.consumed = True
        self.nodes = []
        self._outputs = set()


def make_result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it on the active tape."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=get_dtype())
    out.requires_grad = False
    out.grad = None
    out._tape = None
    out._is_leaf = True
    if debug_enabled() and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(op)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, backward)
    return out
