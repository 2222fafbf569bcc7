"""Finite-difference gradient checks for every block at tiny sizes (shared by tests and the CLI)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import blocks as B
from . import tensor as T
from .losses import hybrid_loss, total_loss
from .model import BlockConfig, Vcamba
from .ssm import S6, selective_scan

TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-4


def _case(module_fn, n_inputs: int, dim: int, rng: np.random.Generator, frames: int = 2,
          side: int = 4) -> Callable[[], float]:
    module = module_fn(dim, rng)
    xs = [T.Tensor(rng.normal(size=(frames, dim, side, side)), requires_grad=True)
          for _ in range(n_inputs)]
    probe = T.Tensor(rng.normal(size=xs[0].shape))

    def run() -> float:
        f = lambda *a: T.tsum(module(*xs) * probe)  # noqa: E731
        return max(T.gradcheck(f, xs), T.gradcheck(f, module.parameters()))

    return run


def _selective_scan(rng: np.random.Generator) -> Callable[[], float]:
    L, D, N = 6, 2, 3
    u = T.Tensor(rng.normal(size=(L, D)), requires_grad=True)
    a = T.Tensor(rng.uniform(0.3, 0.95, (L, D, N)), requires_grad=True)
    b = T.Tensor(rng.normal(size=(L, D, N)), requires_grad=True)
    c = T.Tensor(rng.normal(size=(L, N)), requires_grad=True)
    d = T.Tensor(rng.normal(size=D), requires_grad=True)
    return lambda: T.gradcheck(lambda *v: T.tsum(selective_scan(*v) ** 2), [u, a, b, c, d])


def _s6(rng: np.random.Generator) -> Callable[[], float]:
    m = S6(3, rng, state=4, directions=2)
    x = T.Tensor(rng.normal(size=(2, 1, 7, 3)), requires_grad=True)
    f = lambda *a: T.tsum(m(x) ** 2)  # noqa: E731
    return lambda: max(T.gradcheck(f, [x]), T.gradcheck(f, m.parameters()))


def _loss(rng: np.random.Generator) -> Callable[[], float]:
    gt = (rng.uniform(size=(2, 8, 8)) > 0.6).astype(float)
    p = T.Tensor(rng.uniform(0.05, 0.95, gt.shape), requires_grad=True)
    return lambda: T.gradcheck(lambda q: hybrid_loss(q, gt), p)


def tiny_model_config() -> BlockConfig:
    return BlockConfig(channels=(2, 2, 2, 2), frames=2, state=2, expansion=2, patch=2)


def _end_to_end(rng: np.random.Generator, coords: int = 60) -> Callable[[], float]:
    model = Vcamba(tiny_model_config(), seed=int(rng.integers(1 << 30)))
    clip = T.Tensor(rng.uniform(size=(2, 3, 16, 16)), requires_grad=True)
    gt = (rng.uniform(size=(2, 1, 16, 16)) > 0.5).astype(float)
    f = lambda *a: total_loss(model(clip), gt)  # noqa: E731

    def run() -> float:
        worst = T.gradcheck(f, [clip], coords=coords, seed=1)
        return max(worst, T.directional_gradcheck(f, model.parameters(), seed=2))

    return run


BLOCKS: dict[str, Callable[[np.random.Generator], Callable[[], float]]] = {
    "selective_scan": _selective_scan,
    "s6": _s6,
    "rfvss": lambda r: _case(lambda c, g: B.RFVSS(c, g, state=2, expansion=2), 1, 3, r),
    "vss": lambda r: _case(lambda c, g: B.VSSBlock(c, g, state=2, ffn="plain", expansion=2), 1, 3, r),
    "dse": lambda r: _case(B.DSE, 1, 3, r),
    "afe": lambda r: _case(lambda c, g: B.AFE(c, g, state=2), 1, 3, r),
    "slmp": lambda r: _case(lambda c, g: B.SLMP(c, g, state=2), 1, 3, r),
    "flmp": lambda r: _case(lambda c, g: B.FLMP(c, g, state=2), 1, 3, r),
    "mfm": lambda r: _case(lambda c, g: B.MFM(c, g, state=2), 2, 3, r),
    "sfmf": lambda r: _case(lambda c, g: B.SFMF(c, g, state=2), 2, 3, r),
    "loss": _loss,
    "vcamba": _end_to_end,
}


def check_block(name: str, seed: int = 0) -> float:
    if name not in BLOCKS:
        raise KeyError(f"unknown block {name!r}; choose from {sorted(BLOCKS)}")
    return BLOCKS[name](np.random.default_rng(seed))()


def tolerance(name: str) -> float:
    return END_TO_END_TOLERANCE if name == "vcamba" else TOLERANCE
