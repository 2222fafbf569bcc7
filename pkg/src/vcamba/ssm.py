"""Selective state space kernel: ZOH discretization, the linear recurrence, and S6."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import EmptySequence, NonPositiveDelta, ShapeError
from .nn import Module, param
from .tensor import Tensor


class DiscreteParams(NamedTuple):
    a_bar: Tensor
    b_bar: Tensor


def discretize_zoh(a, b, delta) -> DiscreteParams:
    """Zero-order hold for a diagonal A.

    A_bar = exp(delta * A) and B_bar = (exp(delta * A) - 1) / (delta * A) * delta * B,
    the second factor switching to its series 1 + z/2 when |delta * A| < 1e-8.
    Arguments broadcast against each other; typical layouts are A (..., D, N),
    B (..., L, 1, N), delta (..., L, D, 1).
    """
    a, b, delta = T.as_tensor(a), T.as_tensor(b), T.as_tensor(delta)
    if np.any(delta.data <= 0):
        raise NonPositiveDelta("delta must be strictly positive")
    z = delta * a
    return DiscreteParams(T.exp(z), T.exprel(z) * delta * b)


def scan_forward(u: np.ndarray, a_bar: np.ndarray, b_bar: np.ndarray,
                 c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run h_t = A_bar_t h_{t-1} + B_bar_t u_t from h_0 = 0 and read out C_t h_t.

    Shapes: u (S, L, D), a_bar and b_bar (S, L, D, N), c (S, L, N). Returns
    (y, states) with states time-major (L, S, D, N).
    """
    length = u.shape[-2]
    a_t = np.ascontiguousarray(np.moveaxis(a_bar, -3, 0))
    bu = np.ascontiguousarray(np.moveaxis(b_bar * u[..., None], -3, 0))
    states = np.empty_like(bu)
    h = np.zeros(bu.shape[1:])
    for t in range(length):
        np.multiply(a_t[t], h, out=states[t])
        states[t] += bu[t]
        h = states[t]
    c_t = np.moveaxis(c, -2, 0)
    y = np.einsum("l...dn,l...n->l...d", states, c_t)
    return np.moveaxis(y, 0, -2), states


def selective_scan(u, a_bar, b_bar, c, d=None) -> Tensor:
    """Differentiable linear recurrence y_t = C_t h_t (+ D u_t), h_t = A_bar_t h_{t-1} + B_bar_t u_t.

    Exact sequential evaluation in O(L * D * N). All of u, a_bar, b_bar, c (and d)
    receive gradients.
    """
    u, a_bar, b_bar, c = (T.as_tensor(v) for v in (u, a_bar, b_bar, c))
    if u.ndim < 2 or u.shape[-2] == 0:
        raise EmptySequence("selective_scan needs at least one token")
    lead = u.shape[:-2]
    length, dim = u.shape[-2:]
    n = a_bar.shape[-1]
    want = lead + (length, dim, n)
    if a_bar.shape != want or b_bar.shape != want:
        raise ShapeError(f"a_bar/b_bar must be {want}, got {a_bar.shape} and {b_bar.shape}")
    if c.shape != lead + (length, n):
        raise ShapeError(f"c must be {lead + (length, n)}, got {c.shape}")
    ud, ad, bd, cd = u.data, a_bar.data, b_bar.data, c.data
    y, states = scan_forward(ud, ad, bd, cd)

    def backward(g):
        g_t = np.moveaxis(g, -2, 0)
        c_t = np.moveaxis(cd, -2, 0)
        a_t = np.moveaxis(ad, -3, 0)
        direct = g_t[..., None] * c_t[..., None, :]
        acc = np.empty_like(direct)
        acc[length - 1] = direct[length - 1]
        for t in range(length - 2, -1, -1):
            np.multiply(a_t[t + 1], acc[t + 1], out=acc[t])
            acc[t] += direct[t]
        prev = np.zeros_like(states)
        prev[1:] = states[:-1]
        u_t = np.moveaxis(ud, -2, 0)
        g_a = np.moveaxis(acc * prev, 0, -3)
        g_b = np.moveaxis(acc * u_t[..., None], 0, -3)
        g_u = np.moveaxis((acc * np.moveaxis(bd, -3, 0)).sum(-1), 0, -2)
        g_c = np.moveaxis(np.einsum("l...d,l...dn->l...n", g_t, states), 0, -2)
        return g_u, g_a, g_b, g_c

    out = T.record(y, (u, a_bar, b_bar, c), backward)
    if d is not None:
        out = out + u * d
    return out


def _exprel(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(z) and exprel(z) = (exp(z) - 1) / z, series-patched near zero."""
    ez = np.exp(z)
    tiny = np.abs(z) < 1e-3
    rel = ez - 1.0
    if tiny.any():
        np.divide(rel, np.where(tiny, 1.0, z), out=rel)
        zt = z[tiny]
        rel[tiny] = 1.0 + zt * (0.5 + zt * (1.0 / 6.0 + zt / 24.0))
    else:
        rel /= z
    return ez, rel


def _dexprel(z: np.ndarray, ez: np.ndarray, rel: np.ndarray) -> np.ndarray:
    tiny = np.abs(z) < 1e-3
    if not tiny.any():
        return (ez - rel) / z
    out = (ez - rel) / np.where(tiny, 1.0, z)
    zt = z[tiny]
    out[tiny] = 0.5 + zt * (1.0 / 3.0 + zt * (1.0 / 8.0 + zt / 30.0))
    return out


def zoh_scan(u, delta, a, b, c, d=None) -> Tensor:
    """Fused discretize_zoh + selective_scan for the S6 layout.

    u, delta (..., L, D); a (..., D, N) broadcastable over L; b, c (..., L, N).
    Same values as the two-step composition, with far fewer intermediates.
    Internally everything is time-major so the recurrence walks contiguous memory.
    """
    u, delta, a, b, c = (T.as_tensor(v) for v in (u, delta, a, b, c))
    if u.shape[-2] == 0:
        raise EmptySequence("empty sequence")
    if np.any(delta.data <= 0):
        raise NonPositiveDelta("delta must be strictly positive")
    length = u.shape[-2]
    u_t = np.moveaxis(u.data, -2, 0)              # (L, ..., D)
    d_t = np.moveaxis(delta.data, -2, 0)
    b_t = np.moveaxis(b.data, -2, 0)[..., None, :]  # (L, ..., 1, N)
    c_t = np.moveaxis(c.data, -2, 0)
    ad = a.data
    z = d_t[..., None] * ad                       # (L, ..., D, N), contiguous
    a_bar, rel = _exprel(z)
    du = d_t * u_t
    states = rel * b_t
    states *= du[..., None]                       # B_bar u, overwritten by h below
    for t in range(1, length):
        h = states[t]
        h += a_bar[t] * states[t - 1]
    y = np.moveaxis(np.einsum("l...dn,l...n->l...d", states, c_t), 0, -2)

    def backward(g):
        g_t = np.moveaxis(g, -2, 0)
        acc = g_t[..., None] * c_t[..., None, :]
        for t in range(length - 2, -1, -1):
            acc[t] += a_bar[t + 1] * acc[t + 1]
        g_c = np.moveaxis(np.einsum("l...d,l...dn->l...n", g_t, states), 0, -2)
        prev = states
        prev[1:] = states[:-1]
        prev[0] = 0.0
        # dL/dz = acc * (prev * a_bar + drel * B * delta * u)
        g_z = prev
        g_z *= a_bar
        g_z += _dexprel(z, a_bar, rel) * b_t * du[..., None]
        g_z *= acc
        acc *= rel                                # dL/d(B * delta * u) per state
        s_du = np.einsum("l...dn,l...n->l...d", acc, b_t[..., 0, :])
        g_u = s_du * d_t
        g_delta = s_du * u_t + np.einsum("l...dn,...dn->l...d", g_z, ad)
        g_a = np.einsum("l...dn,l...d->...dn", g_z, d_t)
        g_b = np.einsum("l...dn,l...d->l...n", acc, du)
        return (np.moveaxis(g_u, 0, -2), np.moveaxis(g_delta, 0, -2), g_a,
                np.moveaxis(g_b, 0, -2), g_c)

    out = T.record(y, (u, delta, a, b, c), backward)
    if d is not None:
        out = out + u * d
    return out


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class S6(Module):
    """Bank of K independent selective SSMs, one per scan direction.

    Per token x (D channels): delta = softplus(x W_delta + b_delta), B = x W_B,
    C = x W_C; A = -exp(A_log) is diagonal per (channel, state).
    Input is (L, D), (Bt, L, D) with K == 1, or (K, Bt, L, D).
    """

    def __init__(self, dim: int, rng: np.random.Generator, state: int = 8, directions: int = 1,
                 dt_min: float = 0.01, dt_max: float = 0.1):
        k = directions
        bound = 1.0 / np.sqrt(dim)
        self.dim, self.state, self.directions = dim, state, k
        self.w_delta = param(rng.uniform(-bound, bound, (k, 1, dim, dim)) * 0.1)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), (k, 1, 1, dim)))
        self.b_delta = param(inverse_softplus(dt))
        self.w_b = param(rng.uniform(-bound, bound, (k, 1, dim, state)))
        self.w_c = param(rng.uniform(-bound, bound, (k, 1, dim, state)))
        a_init = np.broadcast_to(np.arange(1, state + 1, dtype=np.float64), (k, 1, 1, dim, state))
        self.a_log = param(np.log(a_init))
        self.d_skip = param(np.ones((k, 1, 1, dim)))

    def project(self, x: Tensor):
        delta = T.softplus(x @ self.w_delta + self.b_delta)
        return delta, x @ self.w_b, x @ self.w_c

    def forward(self, x: Tensor) -> Tensor:
        shape = x.shape
        if x.ndim == 2:
            x = T.reshape(x, (1, 1) + shape)
        elif x.ndim == 3:
            x = T.reshape(x, (1,) + shape)
        if x.ndim != 4 or x.shape[0] != self.directions or x.shape[-1] != self.dim:
            raise ShapeError(f"S6 bank (K={self.directions}, D={self.dim}) got input {shape}")
        if x.shape[-2] == 0:
            raise EmptySequence("empty sequence")
        delta, b, c = self.project(x)
        a = T.reshape(-T.exp(self.a_log), (self.directions, 1, self.dim, self.state))
        y = zoh_scan(x, delta, a, b, c, self.d_skip)
        return T.reshape(y, shape)

    def forward_reference(self, x: Tensor) -> Tensor:
        """Unfused discretize_zoh then selective_scan; same values as ``forward``."""
        x4 = T.reshape(x, (self.directions, -1) + x.shape[-2:])
        delta, b, c = self.project(x4)
        a = -T.exp(self.a_log)
        disc = discretize_zoh(a, T.reshape(b, b.shape[:-1] + (1, self.state)),
                              T.reshape(delta, delta.shape + (1,)))
        full = x4.shape + (self.state,)
        a_bar = disc.a_bar * np.ones(full)
        return T.reshape(selective_scan(x4, a_bar, disc.b_bar, c, self.d_skip), x.shape)
