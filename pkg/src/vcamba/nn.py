"""Small module system and layers on top of :mod:`vcamba.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container; parameters are leaf tensors with ``requires_grad``."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad and value.is_leaf:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return param(rng.uniform(-bound, bound, size=shape))


class Linear(Module):
    """y = x @ W + b over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False):
        bound = 1.0 / np.sqrt(d_in)
        if zero:
            self.weight = param(np.zeros((d_in, d_out)))
            self.bias = param(np.zeros(d_out)) if bias else None
        else:
            self.weight = uniform(rng, (d_in, d_out), bound)
            self.bias = uniform(rng, (d_out,), bound) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.normalize(x, -1, self.eps) * self.weight + self.bias


class Conv2d(Module):
    """Channel-first convolution (M, C, H, W)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, groups: int = 1, bias: bool = True):
        fan_in = (c_in // groups) * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = uniform(rng, (c_out, c_in // groups, kernel, kernel), bound)
        self.bias = uniform(rng, (c_out,), bound) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class SeparableConv2d(Module):
    """Depthwise k x k followed by pointwise 1 x 1."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator):
        self.depthwise = Conv2d(channels, channels, kernel, rng, groups=channels, bias=False)
        self.pointwise = Conv2d(channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


def to_channels_last(x: Tensor) -> Tensor:
    return T.transpose(x, (0, 2, 3, 1))


def to_channels_first(x: Tensor) -> Tensor:
    return T.transpose(x, (0, 3, 1, 2))


class FFN(Module):
    """Two-layer token MLP on channels-last input."""

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4,
                 zero_out: bool = False):
        self.fc1 = Linear(dim, dim * expansion, rng)
        self.fc2 = Linear(dim * expansion, dim, rng, zero=zero_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class RFFFN(Module):
    """Receptive-field FFN: expand, GELU, parallel separable convs summed, project back.

    Input and output are channels-last (M, H, W, C).
    """

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4,
                 kernels=(1, 3, 5, 7), zero_out: bool = False):
        hidden = dim * expansion
        self.fc1 = Linear(dim, hidden, rng)
        self.branches = [SeparableConv2d(hidden, k, rng) for k in kernels]
        self.kernels = tuple(kernels)
        self.fc2 = Linear(hidden, dim, rng, zero=zero_out)
        self.active: tuple[int, ...] | None = None

    def forward(self, x: Tensor) -> Tensor:
        h = to_channels_first(T.gelu(self.fc1(x)))
        idx = range(len(self.branches)) if self.active is None else self.active
        acc = None
        for i in idx:
            y = self.branches[i](h)
            acc = y if acc is None else acc + y
        return self.fc2(to_channels_last(acc))


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic interpolation matrix, half-pixel centres (align_corners=False)."""
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        mat[i, hi] += frac
    return mat


def upsample(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize over the last two axes."""
    h, w = x.shape[-2:]
    if (h, w) == tuple(size):
        return x
    ah = Tensor(bilinear_matrix(size[0], h))
    aw = Tensor(bilinear_matrix(size[1], w).T)
    return ah @ x @ aw
