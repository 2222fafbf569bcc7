import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcamba import tensor as T
from vcamba.errors import NonScalarLoss, NumericsError, ShapeError
from vcamba.tensor import Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# -- elementwise --------------------------------------------------------------


def test_scalar_examples():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)
    assert T.clamp(Tensor(2.0), 1e-7, 1 - 1e-7).item() == 1 - 1e-7


def test_gelu_is_tanh_approximation():
    x = np.linspace(-4, 4, 9)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, ref, rtol=1e-15)


def test_sigmoid_extremes_are_finite():
    out = T.sigmoid(Tensor(np.array([-800.0, 800.0]))).data
    assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


UNARY = {
    "exp": T.exp,
    "log": lambda a: T.log(T.tabs(a) + 0.5),
    "sqrt": lambda a: T.sqrt(T.tabs(a) + 0.5),
    "sin": T.sin,
    "cos": T.cos,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "silu": T.silu,
    "gelu": T.gelu,
    "softplus": T.softplus,
    "exprel": T.exprel,
    "clamp": lambda a: T.clamp(a, -0.5, 0.5),
    "abs": T.tabs,
    "relu": T.relu,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradcheck(name):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 0.05] = 0.3  # keep away from kinks of abs/relu/clamp
    x[np.abs(np.abs(x) - 0.5) < 0.05] = 0.3
    assert T.gradcheck(lambda a: T.tsum(UNARY[name](a)), leaf(x)) <= 1e-6


def test_exprel_near_zero():
    z = np.array([0.0, 1e-12, -1e-9, 1e-6, -1e-4])
    np.testing.assert_allclose(T.exprel(Tensor(z)).data, np.where(z == 0, 1, np.expm1(z) / np.where(z == 0, 1, z)),
                               rtol=1e-12)
    x = leaf(np.array([1e-9, -3e-4, 7e-4, -2e-3, -0.5]))
    assert T.gradcheck(lambda a: T.tsum(T.exprel(a)), x, eps=1e-7) < 1e-7


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "atan2", "hypot", "maximum"])
def test_binary_broadcast_gradients(op):
    rng = np.random.default_rng(1)
    a = leaf(rng.uniform(0.5, 2.0, (3, 1, 4)))
    b = leaf(rng.uniform(0.5, 2.0, (2, 1)))
    fn = getattr(T, op)
    out = fn(a, b)
    assert out.shape == (3, 2, 4)
    w = Tensor(rng.normal(size=out.shape))
    assert T.gradcheck(lambda x, y: T.tsum(fn(x, y) * w), [a, b]) < 1e-7


def test_broadcast_gradient_is_sum():
    a = leaf(np.ones((2, 3)))
    b = leaf(np.ones(3))
    T.tsum(a + b).backward()
    np.testing.assert_array_equal(b.grad, [2, 2, 2])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_debug_division_by_zero():
    T.set_debug(True)
    try:
        with pytest.raises(NumericsError):
            T.div(Tensor(1.0), Tensor(0.0))
        with pytest.raises(NumericsError):
            T.log(Tensor(np.array([-1.0])))
    finally:
        T.set_debug(False)


# -- matmul / conv / softmax --------------------------------------------------


def test_matmul_examples():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(x)).data, x)
    np.testing.assert_array_equal((Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])).data, [[3], [7]])
    a, b = np.array([2.0, 3.0]).reshape(2, 1, 1), np.array([5.0, 7.0]).reshape(2, 1, 1)
    np.testing.assert_array_equal((Tensor(a) @ Tensor(b)).data.ravel(), [10, 21])
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_gradcheck_batched_broadcast():
    rng = np.random.default_rng(2)
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
    assert T.gradcheck(lambda x, y: T.tsum((x @ y) ** 2), [a, b]) < 1e-8


def test_conv_examples():
    x = np.random.default_rng(3).normal(size=(1, 1, 4, 5))
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1)))).data, x)
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert out.data[0, 0, 1, 1] == 9.0


def test_depthwise_channels_uncoupled():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 3, 5, 5)))
    w = rng.normal(size=(3, 1, 3, 3))
    w[1] = 0
    out = T.conv2d(x, Tensor(w), groups=3).data
    assert np.all(out[:, 1] == 0) and np.all(out[:, 0] != 0) and np.all(out[:, 2] != 0)


def _conv_reference(x, w, b, stride, pad, groups):
    m, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((m, cout, ho, wo))
    per = cout // groups
    for o in range(cout):
        g = o // per
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, g * cg:(g + 1) * cg, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[:, o, i, j] = (patch * w[o]).sum(axis=(1, 2, 3)) + (b[o] if b is not None else 0)
    return out


@pytest.mark.parametrize("cin,cout,k,stride,groups", [(2, 3, 3, 1, 1), (4, 4, 5, 1, 4), (4, 2, 3, 1, 2),
                                                       (3, 2, 2, 2, 1), (2, 4, 1, 1, 1)])
def test_conv_matches_direct_loops_and_gradcheck(cin, cout, k, stride, groups):
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=(2, cin, 6, 6)))
    w = leaf(rng.normal(size=(cout, cin // groups, k, k)))
    b = leaf(rng.normal(size=cout))
    pad = (k - 1) // 2 if stride == 1 else 0
    out = T.conv2d(x, w, b, stride=stride, padding=pad, groups=groups)
    np.testing.assert_allclose(out.data, _conv_reference(x.data, w.data, b.data, stride, pad, groups), atol=1e-12)
    probe = Tensor(rng.normal(size=out.shape))
    fn = lambda *a: T.tsum(T.conv2d(*a, stride=stride, padding=pad, groups=groups) * probe)  # noqa: E731
    assert T.gradcheck(fn, [x, w, b]) < 1e-8


def test_softmax_examples():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], rtol=1e-15)
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(T.softmax(Tensor(x + 100.0)).data, T.softmax(Tensor(x)).data, rtol=1e-12)
    assert np.all(np.isfinite(T.softmax(Tensor([1e4, -1e4])).data))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=6))
def test_softmax_sums_to_one(vals):
    out = T.softmax(Tensor(np.array(vals)), axis=-1).data
    assert out.sum() == pytest.approx(1.0, abs=1e-12)


# -- reductions / shape -------------------------------------------------------


SHAPE_OPS = {
    "sum_axis": lambda a: T.tsum(a, axis=1),
    "mean_keep": lambda a: T.mean(a, axis=(0, 2), keepdims=True),
    "reshape": lambda a: T.reshape(a, (6, 4)),
    "transpose": lambda a: T.transpose(a, (2, 0, 1)),
    "swapaxes": lambda a: T.swapaxes(a, 0, 2),
    "moveaxis": lambda a: T.moveaxis(a, 0, -1),
    "slice": lambda a: a[:, 1:, ::2],
    "fancy": lambda a: T.getitem(a, (np.array([0, 0, 1]),)),
    "take": lambda a: T.take(a, np.array([2, 0, 2]), axis=1),
    "concat": lambda a: T.concat([a, a * 2.0], axis=2),
    "stack": lambda a: T.stack([a, a], axis=1),
    "pad": lambda a: T.pad(a, ((1, 0), (0, 2), (1, 1))),
    "normalize": lambda a: T.normalize(a, -1),
    "softmax": lambda a: T.softmax(a, 0),
}


@pytest.mark.parametrize("name", sorted(SHAPE_OPS))
def test_shape_op_gradcheck(name):
    rng = np.random.default_rng(6)
    x = leaf(rng.normal(size=(2, 3, 4)))
    probe = Tensor(rng.normal(size=SHAPE_OPS[name](x).shape))
    assert T.gradcheck(lambda a: T.tsum(SHAPE_OPS[name](a) * probe), x) < 1e-8


# -- backward -----------------------------------------------------------------


def test_backward_examples():
    x = leaf([1.0, 2.0])
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, [1, 1])
    x = leaf([1.0, 2.0])
    T.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2, 4])
    with pytest.raises(NonScalarLoss):
        (x * 2.0).backward()


def test_shared_subexpression_visited_once():
    x = leaf(3.0)
    y = x * x
    z = y + y * y  # dz/dx = 2x + 4x^3
    z.backward()
    assert x.grad == pytest.approx(2 * 3 + 4 * 27)


def test_gradcheck_sum_sigmoid():
    x = leaf(np.random.default_rng(7).normal(size=10))
    assert T.gradcheck(lambda a: T.tsum(T.sigmoid(a)), x) <= 1e-6


def test_no_grad_and_threads():
    x = leaf(np.ones(3))
    with T.no_grad():
        assert not (x * 2.0).requires_grad
    seen = []
    t = threading.Thread(target=lambda: seen.append((x * 2.0).requires_grad))
    with T.no_grad():
        t.start()
        t.join()
    assert seen == [True]


def test_ops_are_deterministic():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(3, 3, 3, 3))
    a = T.conv2d(Tensor(x), Tensor(w)).data
    b = T.conv2d(Tensor(x), Tensor(w)).data
    assert a.tobytes() == b.tobytes()


# -- persistence --------------------------------------------------------------


def test_vct1_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    for shape in [(), (3,), (2, 3, 4)]:
        x = rng.normal(size=shape)
        T.save_tensor(tmp_path / "x.vct", x)
        raw = (tmp_path / "x.vct").read_bytes()
        assert raw[:4] == b"VCT1"
        assert int.from_bytes(raw[4:8], "little") == len(shape)
        y = T.load_tensor(tmp_path / "x.vct")
        assert y.shape == shape
        np.testing.assert_array_equal(y.data, x)


def test_vct1_rejects_garbage(tmp_path):
    (tmp_path / "bad.vct").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        T.load_tensor(tmp_path / "bad.vct")


def _square(x, slope=2.0):
    # x**2 with a configurable (possibly wrong) derivative
    return T.record(x.data**2, (x,), lambda g: (slope * x.data * g,))


def test_directional_gradcheck_detects_wrong_backward():
    x, y = leaf(np.linspace(-1, 1, 6)), leaf(np.ones((2, 3)))
    good = lambda a, b: T.tsum(_square(a)) + T.tsum(b * 3.0)  # noqa: E731
    bad = lambda a, b: T.tsum(_square(a, 2.5)) + T.tsum(b * 3.0)  # noqa: E731
    assert T.directional_gradcheck(good, [x, y]) < 1e-8
    assert T.directional_gradcheck(bad, [x, y]) > 1e-3
    assert T.gradcheck(bad, [x, y]) > 1e-3
