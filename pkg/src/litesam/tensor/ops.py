"""Differentiable operations on :class:`Tensor`.

Each op computes its forward result with numpy and registers a backward
closure through :func:`make_node`. Convolution and pooling use strided window
views; their reverse passes scatter back one kernel offset at a time.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ContractError, Tensor, as_tensor, make_node, record_macs

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_node(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    out = ad ** p
    return make_node(out, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def _lift(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# -- unary ------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(a: Tensor) -> Tensor:  # noqa: A001
    ad = a.data
    return make_node(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return make_node(out, (a,), backward, "softplus")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def gelu(a: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def backward(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return make_node(out, (a,), backward, "gelu")


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = _lift(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(out, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0), sa),
                                             _unbroadcast(np.where(cond, 0, g), sb)), "where")


# -- reductions and shape ---------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return div(sum(a, axis, keepdims), float(count))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                     lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_node(np.broadcast_to(a.data, shape).copy(), (a,),
                     lambda g: (_unbroadcast(g, old),), "broadcast")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None))) or i is Ellipsis for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, Tensor):
        idx = idx.data
    out = a.data[idx]
    shape, dtype = a.shape, a.dtype
    basic = _is_basic_index(idx)
    boolean = isinstance(idx, np.ndarray) and idx.dtype == bool

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic or boolean:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(np.asarray(out, order="C"), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    record_macs(out.size * ad.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_node(out, (a, b), backward, "matmul")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"softmax axis {axis} out of range for rank {a.ndim}")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax")


# -- normalization ----------------------------------------------------------

def _norm_backward(g_hat, xhat, inv, axes):
    m = g_hat.mean(axis=axes, keepdims=True)
    mx = (g_hat * xhat).mean(axis=axes, keepdims=True)
    return inv * (g_hat - m - xhat * mx)


def group_norm(x: Tensor, num_groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel group) to zero mean, unit variance, then affine."""
    if x.ndim != 4:
        raise ContractError(f"group_norm expects N,C,H,W input, got {x.shape}")
    n, c, h, w = x.shape
    if num_groups < 1 or c % num_groups:
        raise ContractError(f"{c} channels not divisible into {num_groups} groups")
    if eps <= 0:
        raise ContractError("eps must be positive")
    xg = x.data.reshape(n, num_groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = ((xg - mu) ** 2).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    gd = gamma.data.reshape(1, c, 1, 1)
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        g_hat = (g * gd).reshape(n, num_groups, -1)
        dx = _norm_backward(g_hat, xhat.reshape(n, num_groups, -1), inv, 2).reshape(n, c, h, w)
        return dx, dgamma.reshape(gamma.shape), dbeta.reshape(beta.shape)

    return make_node(out, (x, gamma, beta), backward, "group_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        dx = _norm_backward(g * gamma.data, xhat, inv, -1)
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_node(out, (x, gamma, beta), backward, "layer_norm")


# -- convolution and pooling ------------------------------------------------

def _out_extent(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]


def _scatter_windows(dwin: np.ndarray, padded_shape, kh, kw, s, ho, wo, p) -> np.ndarray:
    """Adjoint of :func:`_windows`; dwin is (N, C, Ho, Wo, kh, kw)."""
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += dwin[..., i, j]
    if p:
        dxp = dxp[:, :, p:-p, p:-p]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation over N,C,H,W input with O,C/g,kh,kw weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups:
        raise ContractError(f"channels (in={c}, out={o}) not divisible by groups={groups}")
    if cg != c // groups:
        raise ContractError(f"weight axis 1 is {cg}, expected C/groups = {c // groups}")
    if bias is not None and bias.shape != (o,):
        raise ContractError(f"bias shape {bias.shape} != ({o},)")
    ho, wo = _out_extent(h, kh, stride, padding), _out_extent(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ContractError(f"conv2d output extent ({ho}, {wo}) is empty for input {h}x{w}")
    record_macs(n * o * ho * wo * cg * kh * kw)
    xd, wd = x.data, weight.data
    xp = _pad(xd, padding)
    og = o // groups

    if kh == kw == 1 and stride == 1 and padding == 0 and groups == 1:
        out = np.einsum("oc,nchw->nohw", wd[:, :, 0, 0], xd, optimize=True)

        def back_x(g):
            return np.einsum("oc,nohw->nchw", wd[:, :, 0, 0], g, optimize=True)

        def back_w(g):
            return np.einsum("nohw,nchw->oc", g, xd, optimize=True)[:, :, None, None]
    elif groups == 1:
        win = _windows(xp, kh, kw, stride, ho, wo)
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

        def back_x(g):
            dwin = np.tensordot(g, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            return _scatter_windows(dwin, xp.shape, kh, kw, stride, ho, wo, padding)

        def back_w(g):
            return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    elif cg == 1 and og == 1:
        # depthwise: accumulate one kernel offset at a time
        out = np.zeros((n, o, ho, wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]
                out += sl * wd[None, :, 0, i, j, None, None]

        def back_x(g):
            dxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride] += g * wd[None, :, 0, i, j, None, None]
            return dxp[:, :, padding:-padding, padding:-padding] if padding else dxp

        def back_w(g):
            dw = np.zeros_like(wd)
            for i in range(kh):
                for j in range(kw):
                    sl = xp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]
                    dw[:, 0, i, j] = (g * sl).sum(axis=(0, 2, 3))
            return dw
    else:
        win = _windows(xp, kh, kw, stride, ho, wo).reshape(n, groups, cg, ho, wo, kh, kw)
        wgr = wd.reshape(groups, og, cg, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", win, wgr, optimize=True).reshape(n, o, ho, wo)

        def back_x(g):
            gg = g.reshape(n, groups, og, ho, wo)
            dwin = np.einsum("ngohw,gocij->ngchwij", gg, wgr, optimize=True).reshape(n, c, ho, wo, kh, kw)
            return _scatter_windows(dwin, xp.shape, kh, kw, stride, ho, wo, padding)

        def back_w(g):
            gg = g.reshape(n, groups, og, ho, wo)
            return np.einsum("ngohw,ngchwij->gocij", gg, win, optimize=True).reshape(wd.shape)

    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        grads = [back_x(g) if x.requires_grad else None, back_w(g) if weight.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_node(out, parents, backward, "conv2d")


def avg_pool2d(x: Tensor, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Window mean with zero padding counted in the k*k denominator."""
    if k < 1:
        raise ContractError("pool kernel must be >= 1")
    n, c, h, w = x.shape
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ContractError(f"pool kernel {k} exceeds padded extent of {h}x{w} (pad {padding})")
    ho, wo = _out_extent(h, k, stride, padding), _out_extent(w, k, stride, padding)
    xp = _pad(x.data, padding)
    if k == 1:
        out = xp[:, :, ::stride, ::stride][:, :, :ho, :wo].copy()
    else:
        # separable box sum: k row shifts, then k column shifts
        span_h, span_w = (ho - 1) * stride + 1, (wo - 1) * stride + 1
        rows = xp[:, :, 0:span_h:stride, :].copy()
        for i in range(1, k):
            rows += xp[:, :, i : i + span_h : stride, :]
        out = rows[:, :, :, 0:span_w:stride].copy()
        for j in range(1, k):
            out += rows[:, :, :, j : j + span_w : stride]
        out /= k * k

    def backward(g):
        gk = g / (k * k)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gk
        return (dxp[:, :, padding:-padding, padding:-padding] if padding else dxp,)

    return make_node(np.ascontiguousarray(out), (x,), backward, "avg_pool2d")


def _interp_matrix(out_size: int, in_size: int, dtype) -> np.ndarray:
    """Bilinear weights with half-pixel centers (align_corners=False)."""
    m = np.zeros((out_size, in_size), dtype=dtype)
    scale = in_size / out_size
    for o in range(out_size):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        frac = src - i0
        m[o, i0] += 1 - frac
        m[o, i1] += frac
    return m


def upsample_bilinear(x: Tensor, size: tuple) -> Tensor:
    """Resize the trailing two axes to ``size``; linear, so the adjoint is exact."""
    h, w = x.shape[-2:]
    oh, ow = size
    ah = _interp_matrix(oh, h, x.dtype)
    aw = _interp_matrix(ow, w, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def backward(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return make_node(np.ascontiguousarray(out), (x,), backward, "upsample_bilinear")
