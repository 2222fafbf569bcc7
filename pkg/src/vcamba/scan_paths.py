"""Serialization orders for 2D, spectral, spatio-temporal and dual-domain token grids.

A path lists cell indices in visiting order; ``seq[k] = grid[order[k]]``.
Cells of an H x W grid are indexed row-major, ``r * W + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ScanPath:
    order: np.ndarray
    inverse: np.ndarray = field(repr=False)
    name: str = ""

    @classmethod
    def from_order(cls, order, name: str = "") -> "ScanPath":
        order = np.asarray(order, dtype=np.int64)
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(order.size)):
            raise ValueError("scan order must be a permutation of range(n)")
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        order.setflags(write=False)
        inverse.setflags(write=False)
        return cls(order, inverse, name)

    def __len__(self) -> int:
        return self.order.size

    def reversed(self, name: str = "") -> "ScanPath":
        return ScanPath.from_order(self.order[::-1].copy(), name or f"{self.name}_rev")

    def apply(self, x, axis: int = -2):
        """Serialize: gather cells along ``axis`` in path order."""
        if isinstance(x, Tensor):
            return T.permute_along(x, self.order, axis)
        return np.take(x, self.order, axis=axis)

    def restore(self, seq, axis: int = -2):
        """Inverse of :meth:`apply`."""
        if isinstance(seq, Tensor):
            return T.permute_along(seq, self.inverse, axis)
        return np.take(seq, self.inverse, axis=axis)

    def cells(self, width: int) -> list[tuple[int, int]]:
        return [(int(i) // width, int(i) % width) for i in self.order]


@lru_cache(maxsize=None)
def cross_scan_paths(h: int, w: int) -> tuple[ScanPath, ...]:
    """Horizontal, vertical, reversed horizontal, reversed vertical."""
    grid = np.arange(h * w).reshape(h, w)
    horizontal = ScanPath.from_order(grid.reshape(-1), "horizontal")
    vertical = ScanPath.from_order(grid.T.reshape(-1), "vertical")
    return (horizontal, vertical, horizontal.reversed("horizontal_rev"),
            vertical.reversed("vertical_rev"))


@lru_cache(maxsize=None)
def spiral_scan_path(h: int, w: int, direction: str = "low2high") -> ScanPath:
    """Clockwise unit-step square spiral from the centred DC cell (h//2, w//2).

    The walk turns right, down, left, up with leg lengths 1, 1, 2, 2, 3, 3, ...
    and skips cells outside the grid. ``high2low`` is the exact reverse.
    """
    if direction not in ("low2high", "high2low"):
        raise ValueError(f"unknown spiral direction {direction!r}")
    if direction == "high2low":
        return spiral_scan_path(h, w, "low2high").reversed("spiral_high2low")
    r, c = h // 2, w // 2
    order = [r * w + c]
    moves = ((0, 1), (1, 0), (0, -1), (-1, 0))
    leg, turn = 1, 0
    total = h * w
    while len(order) < total:
        for _ in range(2):
            dr, dc = moves[turn % 4]
            for _ in range(leg):
                r += dr
                c += dc
                if 0 <= r < h and 0 <= c < w:
                    order.append(r * w + c)
            turn += 1
        leg += 1
    return ScanPath.from_order(order[:total], "spiral_low2high")


@lru_cache(maxsize=None)
def spatiotemporal_paths(n: int, hw: int) -> tuple[ScanPath, ...]:
    """Paths over the N x HW map: frame-major, position-major, and their reverses."""
    return tuple(
        ScanPath.from_order(p.order, name)
        for p, name in zip(cross_scan_paths(n, hw),
                           ("frame_major", "position_major", "frame_major_rev",
                            "position_major_rev"))
    )


@lru_cache(maxsize=None)
def dual_domain_paths(hw: int) -> dict[str, ScanPath]:
    """Orders over 2*HW tokens laid out [spatial 0..HW-1, frequency 0..HW-1]."""
    seq2seq = np.arange(2 * hw)
    point2point = np.stack([np.arange(hw), hw + np.arange(hw)], axis=1).reshape(-1)
    return {
        "seq2seq": ScanPath.from_order(seq2seq, "seq2seq"),
        "point2point": ScanPath.from_order(point2point, "point2point"),
    }


def _stacked_orders(paths: Sequence[ScanPath]) -> np.ndarray:
    lengths = {len(p) for p in paths}
    if len(lengths) != 1:
        raise ShapeError("paths must share one length")
    return np.stack([p.order for p in paths])


def cross_scan(x: Tensor, paths: Sequence[ScanPath], axis: int = -2) -> Tensor:
    """Serialize ``x`` along every path: (...) -> (K, ...)."""
    orders = _stacked_orders(paths)
    axis = axis % x.ndim
    if x.shape[axis] != orders.shape[1]:
        raise ShapeError(f"axis {axis} has {x.shape[axis]} cells, paths cover {orders.shape[1]}")
    inverses = np.stack([p.inverse for p in paths])
    data = np.stack([np.take(x.data, o, axis=axis) for o in orders])

    def backward(g):
        return (sum(np.take(g[k], inverses[k], axis=axis) for k in range(len(orders))),)

    return T.record(data, (x,), backward)


def cross_merge(seqs, paths: Sequence[ScanPath], axis: int = -2):
    """Inverse-permute each of the K sequences back to grid order and sum them.

    ``seqs`` is either a stacked tensor/array (K, ...) or a list of K sequences.
    """
    if isinstance(seqs, (list, tuple)):
        if len(seqs) != len(paths):
            raise ShapeError(f"{len(seqs)} sequences for {len(paths)} paths")
        if all(isinstance(s, Tensor) for s in seqs):
            seqs = T.stack(seqs)
        else:
            seqs = np.stack([np.asarray(s, dtype=np.float64) for s in seqs])
    if seqs.shape[0] != len(paths):
        raise ShapeError(f"{seqs.shape[0]} sequences for {len(paths)} paths")
    orders = _stacked_orders(paths)
    inverses = np.stack([p.inverse for p in paths])
    ax = axis % (seqs.ndim - 1)
    if seqs.shape[1 + ax] != orders.shape[1]:
        raise ShapeError(f"sequence length {seqs.shape[1 + ax]} != path length {orders.shape[1]}")
    raw = seqs.data if isinstance(seqs, Tensor) else seqs
    data = sum(np.take(raw[k], inverses[k], axis=ax) for k in range(len(paths)))
    if not isinstance(seqs, Tensor):
        return data

    def backward(g):
        return (np.stack([np.take(g, o, axis=ax) for o in orders]),)

    return T.record(data, (seqs,), backward)
