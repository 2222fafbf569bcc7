import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcamba import tensor as T
from vcamba.errors import ShapeError
from vcamba.scan_paths import (ScanPath, cross_merge, cross_scan, cross_scan_paths,
                               dual_domain_paths, spatiotemporal_paths, spiral_scan_path)


def ring_order(h: int, w: int) -> list[tuple[int, int]]:
    """Independent oracle: Chebyshev rings around the centre, clockwise from just below the top-right corner."""
    cy, cx = h // 2, w // 2

    def key(cell):
        y, x = cell
        dy, dx = y - cy, x - cx
        r = max(abs(dy), abs(dx))
        if r == 0:
            return (0, 0)
        if dx == r and dy > -r:
            pos = dy + r - 1
        elif dy == r:
            pos = 2 * r + (r - 1 - dx)
        elif dx == -r:
            pos = 4 * r + (r - 1 - dy)
        else:
            pos = 6 * r + (dx + r - 1)
        return (r, pos)

    return sorted(itertools.product(range(h), range(w)), key=key)


def test_cross_paths_2x2():
    hor, ver, hrev, vrev = cross_scan_paths(2, 2)
    assert hor.cells(2) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert ver.cells(2) == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert hrev.cells(2) == hor.cells(2)[::-1]
    assert vrev.cells(2) == ver.cells(2)[::-1]


def test_spiral_examples():
    assert spiral_scan_path(3, 3).cells(3) == [(1, 1), (1, 2), (2, 2), (2, 1), (2, 0),
                                               (1, 0), (0, 0), (0, 1), (0, 2)]
    assert spiral_scan_path(2, 2).cells(2) == [(1, 1), (1, 0), (0, 0), (0, 1)]
    assert spiral_scan_path(1, 1).cells(1) == [(0, 0)]


@pytest.mark.parametrize("h,w", list(itertools.product(range(1, 9), repeat=2)))
def test_spiral_matches_ring_oracle(h, w):
    low = spiral_scan_path(h, w, "low2high")
    assert low.cells(w) == ring_order(h, w)
    high = spiral_scan_path(h, w, "high2low")
    np.testing.assert_array_equal(high.order, low.order[::-1])
    radii = [max(abs(r - h // 2), abs(c - w // 2)) for r, c in low.cells(w)]
    assert radii == sorted(radii)


def test_spatiotemporal_examples():
    hor, ver = spatiotemporal_paths(2, 2)[:2]
    assert hor.cells(2) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert ver.cells(2) == [(0, 0), (1, 0), (0, 1), (1, 1)]


def test_spatiotemporal_frame_rows_are_row_major():
    n, h, w = 3, 2, 3
    hor = spatiotemporal_paths(n, h * w)[0]
    for t in range(n):
        chunk = hor.order[t * h * w:(t + 1) * h * w]
        np.testing.assert_array_equal(chunk - t * h * w, np.arange(h * w))


def test_dual_domain_examples():
    paths = dual_domain_paths(2)
    np.testing.assert_array_equal(paths["seq2seq"].order, [0, 1, 2, 3])
    np.testing.assert_array_equal(paths["point2point"].order, [0, 2, 1, 3])


@pytest.mark.parametrize("hw", [1, 2, 7, 64])
def test_point2point_adjacency(hw):
    order = list(dual_domain_paths(hw)["point2point"].order)
    for p in range(hw):
        assert order.index(p + hw) == order.index(p) + 1


def _all_paths(h, w, n):
    yield from cross_scan_paths(h, w)
    yield spiral_scan_path(h, w, "low2high")
    yield spiral_scan_path(h, w, "high2low")
    yield from spatiotemporal_paths(n, h * w)
    yield from dual_domain_paths(h * w).values()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_paths_are_bijections_and_round_trip(h, w, n, seed):
    rng = np.random.default_rng(seed)
    for p in _all_paths(h, w, n):
        assert sorted(p.order) == list(range(len(p)))
        np.testing.assert_array_equal(p.inverse[p.order], np.arange(len(p)))
        x = rng.normal(size=(3, len(p), 2))
        np.testing.assert_array_equal(p.restore(p.apply(x, axis=1), axis=1), x)
        tx = T.Tensor(x)
        np.testing.assert_array_equal(p.restore(p.apply(tx, axis=1), axis=1).data, x)


def test_from_order_rejects_non_permutation():
    with pytest.raises(ValueError):
        ScanPath.from_order([0, 0, 1])


def test_cross_merge_examples():
    h, w = 3, 4
    paths = cross_scan_paths(h, w)
    zeros = [np.zeros((h * w, 2))] * 4
    np.testing.assert_array_equal(cross_merge(zeros, paths), np.zeros((h * w, 2)))
    rng = np.random.default_rng(0)
    seq = rng.normal(size=(h * w, 2))
    only_third = [np.zeros_like(seq), np.zeros_like(seq), seq, np.zeros_like(seq)]
    np.testing.assert_array_equal(cross_merge(only_third, paths), paths[2].restore(seq, axis=0))


def test_scan_then_merge_is_four_times_identity():
    rng = np.random.default_rng(1)
    x = T.Tensor(rng.normal(size=(2, 12, 3)))
    paths = cross_scan_paths(3, 4)
    merged = cross_merge(cross_scan(x, paths, axis=1), paths, axis=1)
    np.testing.assert_allclose(merged.data, 4 * x.data, rtol=0, atol=1e-15)


def test_cross_merge_shape_errors():
    paths = cross_scan_paths(2, 2)
    with pytest.raises(ShapeError):
        cross_merge([np.zeros((4, 1))] * 3, paths)
    with pytest.raises(ShapeError):
        cross_merge([np.zeros((5, 1))] * 4, paths)


def test_scan_and_merge_gradients():
    rng = np.random.default_rng(2)
    x = T.Tensor(rng.normal(size=(2, 6, 3)), requires_grad=True)
    paths = cross_scan_paths(2, 3)
    w = T.Tensor(rng.normal(size=(4, 2, 6, 3)))
    assert T.gradcheck(lambda a: T.tsum(cross_scan(a, paths, axis=1) * w), x) < 1e-8
    s = T.Tensor(rng.normal(size=(4, 2, 6, 3)), requires_grad=True)
    v = T.Tensor(rng.normal(size=(2, 6, 3)))
    assert T.gradcheck(lambda a: T.tsum(cross_merge(a, paths, axis=1) * v), s) < 1e-8
