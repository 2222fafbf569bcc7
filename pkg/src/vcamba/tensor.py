"""Dense f64 tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor requiring gradients records its inputs and a
local backward closure on the output node. Nodes carry a creation sequence
number, so sorting the reachable nodes by that number recovers execution
order; ``backward`` walks that implicit tape once, in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import os
import struct
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonScalarLoss, NumericsError, ShapeError

_SEQ = itertools.count()
_LOCAL = threading.local()
_DEBUG = os.environ.get("VCAMBA_DEBUG", "") not in ("", "0")

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def set_debug(flag: bool) -> None:
    """Toggle NaN assertions and divide-by-zero checks on every op."""
    global _DEBUG
    _DEBUG = bool(flag)


def is_grad_enabled() -> bool:
    return getattr(_LOCAL, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _LOCAL.grad_enabled = False
    try:
        yield
    finally:
        _LOCAL.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_SEQ)

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise NonScalarLoss(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        nodes = _collect(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method sugar --------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)


# ---------------------------------------------------------------------------
# graph plumbing


def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    out.sort(key=lambda t: t._seq, reverse=True)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise NumericsError("non-finite value produced from finite inputs")
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _bshape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    if _DEBUG and np.any(b.data == 0):
        raise NumericsError("division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b), lambda g: (g / bd, -g * out / bd))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    return _result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def atan2(y, x) -> Tensor:
    """Angle of (x, y) in (-pi, pi]; the gradient at the origin is taken as zero."""
    y, x = as_tensor(y), as_tensor(x)
    _bshape(y, x)
    yd, xd = y.data, x.data
    out = np.arctan2(yd, xd)
    out = np.where(out == -np.pi, np.pi, out)

    def backward(g):
        r2 = xd * xd + yd * yd
        safe = np.where(r2 > 0, r2, 1.0)
        scale = np.where(r2 > 0, g / safe, 0.0)
        return scale * xd, -scale * yd

    return _result(out, (y, x), backward)


def hypot(a, b) -> Tensor:
    """sqrt(a^2 + b^2) with a zero subgradient at the origin."""
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    ad, bd = a.data, b.data
    out = np.hypot(ad, bd)

    def backward(g):
        inv = np.where(out > 0, g / np.where(out > 0, out, 1.0), 0.0)
        return inv * ad, inv * bd

    return _result(out, (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    mask = a.data >= b.data
    return _result(np.maximum(a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask))


# ---------------------------------------------------------------------------
# elementwise unary


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if _DEBUG and np.any(a.data <= 0):
        raise NumericsError("log of a non-positive value")
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    s = _sigmoid(ad)
    return _result(ad * s, (a,), lambda g: (g * s * (1.0 + ad * (1.0 - s)),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_K * (x + _GELU_C * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _result(out, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.clip(x, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return _result(out, (a,), lambda g: (g * inside,))


def exprel(a) -> Tensor:
    """(exp(z) - 1) / z, continued by its series near zero."""
    a = as_tensor(a)
    z = a.data
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    out = np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)

    def backward(g):
        # d/dz exprel(z) = (exp(z) - exprel(z)) / z
        tiny = np.abs(z) < 1e-3
        zs = np.where(tiny, 1.0, z)
        grad = (np.exp(zs) - np.where(tiny, 1.0, out)) / zs
        if tiny.any():
            series = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0))
            grad = np.where(tiny, series, grad)
        return (g * grad,)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def moveaxis(a, src: int, dst: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes.insert(dst % a.ndim, axes.pop(src % a.ndim))
    return transpose(a, axes)


def _has_array_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    fancy = _has_array_index(idx)

    def backward(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return _result(a.data[idx], (a,), backward)


def take(a, indices, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate gradient."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _result(np.take(a.data, indices, axis=axis), (a,), backward)


def permute_along(a, order, axis: int) -> Tensor:
    """Reorder ``axis`` by a permutation; backward applies the inverse."""
    a = as_tensor(a)
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (a.shape[axis],):
        raise ShapeError(f"permutation of length {order.size} on axis of size {a.shape[axis]}")
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return _result(np.take(a.data, order, axis=axis), (a,),
                   lambda g: (np.take(g, inverse, axis=axis),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    n = len(tensors)
    return _result(out, tensors,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` follows ``np.pad``."""
    a = as_tensor(a)
    widths = tuple(tuple(w) for w in widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _result(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


# ---------------------------------------------------------------------------
# contractions


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(ad @ bd, (a, b), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def normalize(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) along ``axis``; the affine part lives in LayerNorm."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxm = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _result(xhat, (a,), backward)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None,
           groups: int = 1) -> Tensor:
    """Cross-correlation of ``x`` (M, C_in, H, W) with ``weight`` (C_out, C_in/groups, kh, kw).

    ``padding=None`` picks (k-1)//2, which preserves H and W for odd kernels at stride 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects x (M,C,H,W) and weight (O,I,kh,kw)")
    m, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if cin % groups or cout % groups or cin // groups != cg:
        raise ShapeError(f"conv2d channel mismatch: x {x.shape}, weight {weight.shape}, groups {groups}")
    if padding is None:
        padding = (kh - 1) // 2
    s = int(stride)
    if groups == cin == cout and s == 1:
        return _depthwise(x, weight, bias, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xp.shape[2:]
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d kernel larger than padded input")
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    od = cout // groups
    wdat = weight.data
    if groups == 1:
        out = np.tensordot(cols, wdat, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    elif cg == 1 and od == 1:
        out = np.einsum("mchwij,cij->mchw", cols, wdat[:, 0])
    else:
        gc = cols.reshape(m, groups, cg, ho, wo, kh, kw)
        gw = wdat.reshape(groups, od, cg, kh, kw)
        out = np.einsum("mgchwij,gdcij->mgdhw", gc, gw).reshape(m, cout, ho, wo)
    out = np.ascontiguousarray(out)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, cout, 1, 1)
        parents.append(bias)

    def backward(g):
        if groups == 1:
            gw_ = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(g, wdat, axes=([1], [0]))  # m,ho,wo,cin,kh,kw
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
        elif cg == 1 and od == 1:
            gw_ = np.einsum("mchw,mchwij->cij", g, cols)[:, None]
            gcols = np.einsum("mchw,cij->mchwij", g, wdat[:, 0])
        else:
            gg = g.reshape(m, groups, od, ho, wo)
            gc = cols.reshape(m, groups, cg, ho, wo, kh, kw)
            gw_ = np.einsum("mgdhw,mgchwij->gdcij", gg, gc).reshape(wdat.shape)
            gcols = np.einsum("mgdhw,gdcij->mgchwij", gg,
                              wdat.reshape(groups, od, cg, kh, kw)).reshape(m, cin, ho, wo, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += gcols[..., i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        grads = [gx, gw_]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, backward)


def _depthwise(x: Tensor, weight: Tensor, bias, padding: int) -> Tensor:
    """Stride-1 depthwise correlation as a sum of shifted, channel-scaled copies."""
    m, c, h, w = x.shape
    kh, kw = weight.shape[2:]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d kernel larger than padded input")
    wk = weight.data[:, 0]
    out = np.zeros((m, c, ho, wo))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + ho, j:j + wo] * wk[:, i, j, None, None]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, c, 1, 1)
        parents.append(bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wk)
        for i in range(kh):
            for j in range(kw):
                win = xp[:, :, i:i + ho, j:j + wo]
                gw[:, i, j] = np.einsum("mchw,mchw->c", g, win)
                gxp[:, :, i:i + ho, j:j + wo] += g * wk[:, i, j, None, None]
        grads = [gxp[:, :, padding:padding + h, padding:padding + w], gw[:, None]]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, backward)


# ---------------------------------------------------------------------------
# verification and persistence


def gradcheck(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5,
              coords: int | None = None, seed: int = 0) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    Numeric derivatives are central differences. ``x`` is perturbed in place and
    restored. ``coords`` caps the number of probed coordinates per input (sampled
    with ``seed``); ``None`` probes all of them.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.grad = None
    out = f(*xs) if not isinstance(x, Tensor) else f(x)
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ana in zip(xs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                idx = rng.choice(flat.size, size=coords, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float((f(*xs) if not isinstance(x, Tensor) else f(x)).data.sum())
                flat[i] = orig - eps
                fm = float((f(*xs) if not isinstance(x, Tensor) else f(x)).data.sum())
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                a = ana.reshape(-1)[i]
                worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst


def directional_gradcheck(f: Callable[..., Tensor], xs: Sequence[Tensor], eps: float = 1e-5,
                          seed: int = 0) -> float:
    """Like :func:`gradcheck`, but probes each tensor along one random unit direction.

    Two evaluations per tensor cover every coordinate at once, which keeps the
    check affordable for models with hundreds of parameter tensors.
    """
    xs = list(xs)
    for t in xs:
        t.grad = None
    f(*xs).backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ana in zip(xs, analytic):
            v = rng.standard_normal(t.shape)
            v /= np.linalg.norm(v) or 1.0
            orig = t.data.copy()
            t.data[...] = orig + eps * v
            fp = float(f(*xs).data.sum())
            t.data[...] = orig - eps * v
            fm = float(f(*xs).data.sum())
            t.data[...] = orig
            num = (fp - fm) / (2.0 * eps)
            a = float(np.sum(ana * v))
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst


_MAGIC = b"VCT1"


def save_tensor(path: str | Path, x) -> None:
    """Write the VCT1 format: magic, u32 LE rank, rank x u64 LE dims, f64 LE payload."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def load_tensor(path: str | Path) -> Tensor:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a VCT1 file")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    offset = 8 + 8 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(dims)
    return Tensor(data.astype(np.float64))


def parameters_finite(tensors: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(t.data)) for t in tensors)


# public hook for ops defined in other modules
record = _result
