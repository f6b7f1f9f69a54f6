"""Differentiable operations on :class:`Tensor`.

Layouts follow the NCHW convention; kernels are OIKK. Every function returns
a new tensor and records a backward closure when grad mode is on.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_node, no_grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data / b.data, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs (n,k)@(k,m), got {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(a.data @ b.data, (a, b), back, "matmul")


# ---------------------------------------------------------------- elementwise

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    sign = np.sign(x.data)
    return make_node(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def softmax(x, axis: int = 1) -> Tensor:
    """Softmax over the channel axis (axis 1) by default."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (x,), back, "softmax")


def log_softmax(x, axis: int = 1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), back, "log_softmax")


# ---------------------------------------------------------------- reductions / shape

def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)),)

    return make_node(out, (x,), back, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)

    def back(g):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)) / count,)

    return make_node(out, (x,), back, "mean")


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(int(lo), int(hi))
            parts.append(g[tuple(idx)])
        return parts

    return make_node(out, ts, back, "concat")


# ---------------------------------------------------------------- spatial

def _check4(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} expects NCHW input, got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlation of NCHW ``x`` with an OIKK ``kernel``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check4(x, "conv2d")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise DimensionError(f"conv2d kernel must be OIKK square, got {kernel.shape}")
    n, c, h, w = x.shape
    o, ci, k, _ = kernel.shape
    if ci != c:
        raise DimensionError(f"kernel expects {ci} input channels, input has {c}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise DimensionError("stride and dilation must be >= 1, padding >= 0")
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {h}x{w} too small for kernel {k} dilation {dilation} padding {padding}")

    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    offsets = [(i * dilation, j * dilation) for i in range(k) for j in range(k)]
    if k == 1 and stride == 1:
        cols = xp.reshape(n, c, ho * wo)
    else:
        cols = np.empty((n, c, k * k, ho, wo))
        for q, (hi, wj) in enumerate(offsets):
            cols[:, :, q] = xp[:, :, hi : hi + hspan : stride, wj : wj + wspan : stride]
        cols = cols.reshape(n, c * k * k, ho * wo)
    wmat = kernel.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols)
    parents: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias must have shape ({o},), got {bias.shape}")
        out += bias.data[:, None]
        parents = (x, kernel, bias)
    out = out.reshape(n, o, ho, wo)

    def back(g):
        gm = g.reshape(n, o, ho * wo)
        gk = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        gx = None
        if x.requires_grad and stride == 1 and o < c and padding <= dilation * (k - 1):
            # correlate the output grad with the flipped, channel-swapped kernel
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            with no_grad():
                gx = conv2d(g, flipped, padding=dilation * (k - 1) - padding, dilation=dilation).data
        elif x.requires_grad:
            dcols = np.matmul(wmat.T, gm).reshape(n, c, k * k, ho, wo)
            gxp = np.zeros(xp.shape)
            for q, (hi, wj) in enumerate(offsets):
                gxp[:, :, hi : hi + hspan : stride, wj : wj + wspan : stride] += dcols[:, :, q]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is not None:
            return gx, gk, gm.sum(axis=(0, 2))
        return gx, gk

    return make_node(out, parents, back, "conv2d")


def max_pool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping ``size``×``size`` max pooling; ties route to the first max."""
    x = as_tensor(x)
    _check4(x, "max_pool2d")
    n, c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"max_pool2d size {size} does not divide {h}x{w}")
    views = [x.data[:, :, i::size, j::size] for i in range(size) for j in range(size)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def back(g):
        gx = np.zeros(x.shape)
        taken = np.zeros(out.shape, dtype=bool)
        for q, v in enumerate(views):
            hit = (v == out) & ~taken
            taken |= hit
            i, j = divmod(q, size)
            gx[:, :, i::size, j::size] = g * hit
        return (gx,)

    return make_node(out, (x,), back, "max_pool2d")


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial axes: NCHW -> NC."""
    x = as_tensor(x)
    _check4(x, "global_avg_pool")
    n, c, h, w = x.shape

    def back(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make_node(x.data.mean(axis=(2, 3)), (x,), back, "global_avg_pool")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    _check4(x, "upsample_nearest")
    n, c, h, w = x.shape
    out = np.empty((n, c, h * factor, w * factor))
    for i in range(factor):
        for j in range(factor):
            out[:, :, i::factor, j::factor] = x.data

    def back(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_node(out, (x,), back, "upsample_nearest")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation matrix, half-pixel centers."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize over the last two axes of a plain array."""
    ah = bilinear_matrix(arr.shape[-2], height)
    aw = bilinear_matrix(arr.shape[-1], width)
    return np.einsum("ij,...jk,lk->...il", ah, arr, aw, optimize=True)


def upsample_bilinear(x, height: int, width: int) -> Tensor:
    x = as_tensor(x)
    _check4(x, "upsample_bilinear")
    ah = bilinear_matrix(x.shape[2], height)
    aw = bilinear_matrix(x.shape[3], width)
    out = np.einsum("ij,ncjk,lk->ncil", ah, x.data, aw, optimize=True)

    def back(g):
        return (np.einsum("ij,ncil,lk->ncjk", ah, g, aw, optimize=True),)

    return make_node(out, (x,), back, "upsample_bilinear")
