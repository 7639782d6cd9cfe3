"""Differentiable operations on :class:`Tensor`.

Every op computes its forward result with numpy, accumulating sums and
products in float64 before rounding to the storage dtype, and registers a
backward rule on the active :class:`GradTape`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from shadoc.autodiff.tensor import Tensor, get_dtype, make_result
from shadoc.errors import ConfigError, ShapeError

F64 = np.float64


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _f64(a: np.ndarray) -> np.ndarray:
    return a.astype(F64, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0, dtype=F64)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True, dtype=F64)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result("sub", a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result("mul", a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return make_result("div", out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return make_result("scale", a.data * c, (a,), lambda g: (g * c,))


def power(a: Tensor, p: float) -> Tensor:
    return make_result("power", a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make_result("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- activations

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation. Elementwise maps run in storage precision."""
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return make_result("gelu", out, (x,), backward)


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    return make_result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    v = x.data
    s = _sigmoid_np(v)
    return make_result("silu", v * s, (x,), lambda g: (g * (s + v * s * (1.0 - s)),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result("relu", x.data * pos, (x,), lambda g: (g * pos,))


ACTIVATIONS = {"gelu": gelu, "silu": silu, "sigmoid": sigmoid, "relu": relu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigError(f"unknown activation '{kind}'") from None


# ---------------------------------------------------------------- reductions & shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=F64)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_result("sum", out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    out = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=F64) / n

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape),)

    return make_result("mean", out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_result("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = tuple(as_tensor(t) for t in xs)
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return make_result("concat", np.concatenate([t.data for t in xs], axis=axis), xs,
                       lambda g: tuple(np.split(g, sizes, axis=axis)))


def split(x: Tensor, sections: int, axis: int = 1) -> list[Tensor]:
    n = x.shape[axis]
    if n % sections:
        raise ShapeError(f"split: axis {axis} extent {n} not divisible into {sections} parts")
    step = n // sections
    parts = []
    for i in range(sections):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        parts.append(index(x, tuple(idx)))
    return parts


def index(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    out = x.data[idx]

    def backward(g):
        full = np.zeros(x.shape, dtype=F64)
        full[idx] = g
        return (full,)

    return make_result("index", out, (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimension mismatch, a axis -1 is {a.shape[-1]}, b axis -2 is {b.shape[-2]}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch extents differ, {a.shape[:-2]} vs {b.shape[:-2]}")
    a64, b64 = _f64(a.data), _f64(b.data)
    out = np.matmul(a64, b64)

    def backward(g):
        return np.matmul(g, np.swapaxes(b64, -1, -2)), np.matmul(np.swapaxes(a64, -1, -2), g)

    return make_result("matmul", out, (a, b), backward)


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation over N x C x H x W input with zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4 (N,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4 (Cout,Cin/groups,kh,kw), got shape {weight.shape}")
    n, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"conv2d: groups={groups} must divide in-channels {cin} and out-channels {cout}")
    if cin // groups != cg:
        raise ShapeError(f"conv2d: channel axis (1) has {cin} channels; weight expects {cg * groups} "
                         f"({cg} per group x {groups} groups)")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ConfigError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded height axis (2) extent {hp}")
    if kw > wp:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded width axis (3) extent {wp}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    if groups == cin and cg == 1 and cout == cin:
        # 9-tap depthwise sums stay in storage precision; channel contractions below use float64
        xp = _zero_pad(x.data, padding)
        out, backward_core = _conv_depthwise(xp, weight.data, stride, ho, wo)
    elif kh == 1 and kw == 1 and stride == 1 and padding == 0:
        xp = _f64(x.data)
        out, backward_core = _conv_pointwise(xp, _f64(weight.data), groups)
    else:
        xp = _zero_pad(_f64(x.data), padding)
        out, backward_core = _conv_grouped(xp, _f64(weight.data), stride, groups, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gxp, gw = backward_core(g)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3), dtype=F64) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("conv2d", out, inputs, lambda g: backward(g)[:len(inputs)])


def _zero_pad(a: np.ndarray, p: int) -> np.ndarray:
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p))) if p else a


def _window(xp, i, j, stride, ho, wo):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _conv_depthwise(xp, wt, stride, ho, wo):
    c, _, kh, kw = wt.shape
    out = np.zeros((xp.shape[0], c, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wt[None, :, 0, i, j, None, None] * _window(xp, i, j, stride, ho, wo)

    def backward_core(g):
        g64, x64 = _f64(g), _f64(xp)
        g = g.astype(xp.dtype, copy=False)
        gxp = np.zeros_like(xp)
        gw = np.zeros(wt.shape, dtype=F64)
        for i in range(kh):
            for j in range(kw):
                _window(gxp, i, j, stride, ho, wo)[...] += wt[None, :, 0, i, j, None, None] * g
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g64, _window(x64, i, j, stride, ho, wo))
        return gxp, gw

    return out, backward_core


def _conv_pointwise(x64, w64, groups):
    n, cin, h, w = x64.shape
    cout = w64.shape[0]
    wmat = w64.reshape(groups, cout // groups, cin // groups)
    xmat = x64.reshape(n, groups, cin // groups, h * w)
    out = np.matmul(wmat[None], xmat).reshape(n, cout, h, w)

    def backward_core(g):
        gmat = _f64(g).reshape(n, groups, cout // groups, h * w)
        gw = np.matmul(gmat, np.swapaxes(xmat, -1, -2)).sum(axis=0).reshape(w64.shape)
        gx = np.matmul(np.swapaxes(wmat, -1, -2)[None], gmat).reshape(n, cin, h, w)
        return gx, gw

    return out, backward_core


def _conv_grouped(xp, w64, stride, groups, ho, wo):
    n, cin, hp, wp = xp.shape
    cout, cg, kh, kw = w64.shape
    og = cout // groups
    k = cg * kh * kw
    wmat = w64.reshape(groups, og, k)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # n, cin, ho, wo, kh, kw
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, groups, k, ho * wo)
    out = np.matmul(wmat[None], cols).reshape(n, cout, ho, wo)

    def backward_core(g):
        gmat = _f64(g).reshape(n, groups, og, ho * wo)
        gw = np.matmul(gmat, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(w64.shape)
        gcols = np.matmul(np.swapaxes(wmat, -1, -2)[None], gmat)  # n, groups, k, ho*wo
        gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                _window(gxp, i, j, stride, ho, wo)[...] += gcols[:, :, i, j]
        return gxp, gw

    return out, backward_core


# ---------------------------------------------------------------- normalization

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6, axis: int = 1) -> Tensor:
    """Normalize across ``axis`` (channels) independently at every other position."""
    if eps <= 0:
        raise ConfigError(f"layer_norm: eps must be > 0, got {eps}")
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({c},) to match axis {axis}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    v = _f64(x.data)
    mu = v.mean(axis=axis, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g64 = _f64(gamma.data).reshape(bshape)
    out = xhat * g64 + _f64(beta.data).reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gxhat = g * g64
        gx = inv * (gxhat - gxhat.mean(axis=axis, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red, dtype=F64)

    return make_result("layer_norm", out, (x, gamma, beta), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    v = _f64(x.data)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", y, (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    v = _f64(x.data)
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    d = np.maximum(norm, eps)
    y = v / d
    active = norm > eps

    def backward(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return ((g - y * proj * active) / d,)

    return make_result("l2_normalize", y, (x,), backward)


# ---------------------------------------------------------------- resampling

def _separable(op: str, x: Tensor, ry: np.ndarray, rx: np.ndarray) -> Tensor:
    """out = ry @ x @ rx.T over the two trailing axes; linear, so backward is the transpose."""
    out = np.matmul(np.matmul(ry, _f64(x.data)), rx.T)
    return make_result(op, out, (x,), lambda g: (np.matmul(np.matmul(ry.T, g), rx),))


def reflect_matrix(n: int, before: int, after: int) -> np.ndarray:
    idx = np.arange(-before, n + after)
    idx = np.where(idx < 0, -idx, idx)
    idx = np.where(idx > n - 1, 2 * (n - 1) - idx, idx)
    m = np.zeros((n + before + after, n), dtype=F64)
    m[np.arange(len(idx)), idx] = 1.0
    return m


def pad_reflect(x: Tensor, pad: tuple[int, int, int, int]) -> Tensor:
    """Mirror-pad (left, right, top, bottom) without repeating the edge sample."""
    left, right, top, bottom = pad
    h, w = x.shape[-2:]
    for name, p, extent, axis in (("left", left, w, 3), ("right", right, w, 3),
                                  ("top", top, h, 2), ("bottom", bottom, h, 2)):
        if p < 0 or (p > 0 and p >= extent):
            raise ShapeError(f"pad_reflect: {name} pad {p} must be < axis {axis} extent {extent}")
    if not any(pad):
        return make_result("pad_reflect", x.data, (x,), lambda g: (g,))
    return _separable("pad_reflect", x, reflect_matrix(h, top, bottom), reflect_matrix(w, left, right))


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=F64)
    if n_out == 1 or n_in == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with align-corners sampling."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: output size must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    return _separable("resize_bilinear", x, bilinear_matrix(out_h, h), bilinear_matrix(out_w, w))


def pool_matrix(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=F64)
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    h, w = x.shape[-2:]
    if not 1 <= out_h <= h:
        raise ShapeError(f"adaptive_avg_pool: out_h {out_h} must be in [1, {h}] (axis 2)")
    if not 1 <= out_w <= w:
        raise ShapeError(f"adaptive_avg_pool: out_w {out_w} must be in [1, {w}] (axis 3)")
    return _separable("adaptive_avg_pool", x, pool_matrix(out_h, h), pool_matrix(out_w, w))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_dtype()))
