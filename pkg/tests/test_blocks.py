import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcamba import blocks as B
from vcamba import frequency as F
from vcamba import tensor as T
from vcamba.checks import BLOCKS, check_block, tolerance
from vcamba.errors import ShapeError, TooFewFrames
from vcamba.nn import RFFFN
from vcamba.scan_paths import spatiotemporal_paths, spiral_scan_path
from vcamba.tensor import Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def clip(shape, seed=1, scale=1.0):
    return Tensor(rng(seed).normal(size=shape) * scale)


def zero_linear(lin):
    lin.weight.data[...] = 0
    if lin.bias is not None:
        lin.bias.data[...] = 0


def forbid_memory(scan: B.DirectionalSSM, branch: int) -> None:
    """Force A_bar = 0 on one direction so that branch becomes memoryless."""
    scan.ssm.a_log.data[branch] = 60.0


# -- shape contracts ----------------------------------------------------------


def test_rfvss_shape_and_zero_identity():
    blk = B.RFVSS(4, rng())
    x = clip((2, 4, 8, 8))
    assert blk(x).shape == (2, 4, 8, 8)
    zero_linear(blk.out_proj)
    zero_linear(blk.ffn.fc2)
    assert np.all(blk(Tensor(np.zeros((2, 4, 8, 8)))).data == 0)
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_rf_branch_locality():
    ffn = RFFFN(3, rng(), expansion=2)
    ffn.active = (3,)
    assert ffn.kernels[3] == 7
    x = rng(2).normal(size=(1, 16, 16, 3))
    base = ffn(Tensor(x)).data
    x[0, 8, 8, 1] += 1.0
    diff = np.abs(ffn(Tensor(x)).data - base).max(axis=-1)[0]
    rows, cols = np.nonzero(diff > 0)
    assert rows.min() == 5 and rows.max() == 11 and cols.min() == 5 and cols.max() == 11


def test_vss_rejects_bad_rank():
    with pytest.raises(ShapeError):
        B.VSSBlock(4, rng(), ffn="plain")(clip((4, 8, 8)))
    with pytest.raises(ValueError):
        B.VSSBlock(4, rng(), ffn="other")


def test_dse_examples():
    dse = B.DSE(4, rng())
    still = np.repeat(rng(3).normal(size=(1, 4, 4, 4)), 3, axis=0)
    assert np.all(dse(Tensor(still)).data == 0)
    assert dse(clip((3, 4, 4, 4))).shape == (3, 4, 4, 4)
    with pytest.raises(TooFewFrames):
        dse(clip((1, 4, 4, 4)))


def test_dse_single_channel_single_position_is_value_projection():
    dse = B.DSE(1, rng())
    x = rng(4).normal(size=(2, 1, 1, 1))
    expected = (x[1] - x[0]).reshape(1) * dse.w_v.weight.data[0, 0]
    out = dse(Tensor(x)).data.reshape(2)
    np.testing.assert_allclose(out, [expected[0]] * 2, rtol=1e-13)


def test_dse_matches_channel_attention_oracle():
    c, h, w = 3, 2, 3
    dse = B.DSE(c, rng())
    x = rng(4).normal(size=(3, c, h, w))
    out = dse(Tensor(x)).data
    wq, wk, wv = dse.w_q.weight.data, dse.w_k.weight.data, dse.w_v.weight.data
    for i in range(3):
        d = (x[min(i + 1, 2)] - x[min(i, 1)]).reshape(c, h * w).T  # (HW, C)
        m = (d @ wk).T @ (d @ wq) / np.sqrt(h * w)
        s = np.exp(m - m.max(axis=0)) / np.exp(m - m.max(axis=0)).sum(axis=0)
        np.testing.assert_allclose(out[i], (d @ wv @ s).T.reshape(c, h, w), rtol=1e-12, atol=1e-14)


def test_dse_keeps_motion_local():
    dse = B.DSE(4, rng())
    x = np.repeat(rng(5).normal(size=(1, 4, 6, 6)), 3, axis=0)
    x[1:, :, 2, 3] += 1.0
    out = np.abs(dse(Tensor(x)).data).sum(axis=1)
    assert out[0, 2, 3] > 0
    out[:, 2, 3] = 0
    assert np.all(out == 0)


def test_dse_last_difference_repeats_backward_difference():
    x = rng(5).normal(size=(1, 4, 2, 3, 3))
    d = B.DSE.differences(Tensor(x)).data
    np.testing.assert_array_equal(d[0, 3], x[0, 3] - x[0, 2])
    np.testing.assert_array_equal(d[0, 0], x[0, 1] - x[0, 0])


def test_afe_zero_projection_is_identity():
    afe = B.AFE(3, rng(), zero_out=True)
    x = clip((2, 3, 8, 8))
    np.testing.assert_allclose(afe(x).data, x.data, atol=1e-12)


def test_afe_output_real_and_shape():
    x = clip((2, 3, 8, 8))
    for kind in ("spiral", "cross"):
        afe = B.AFE(3, rng(), scan=kind)
        out = afe(x)
        assert out.shape == x.shape and out.data.dtype == np.float64
        assert np.all(np.isfinite(out.data))
    assert spiral_scan_path(8, 8).cells(8)[0] == (4, 4)
    with pytest.raises(ValueError):
        B.AFE(3, rng(), scan="zigzag")


def test_slmp_shape_and_errors():
    slmp = B.SLMP(4, rng())
    assert slmp(clip((5, 4, 8, 8))).shape == (5, 4, 8, 8)
    assert slmp(clip((2, 5, 4, 4, 4))).shape == (2, 5, 4, 4, 4)
    with pytest.raises(TooFewFrames):
        slmp(clip((1, 4, 8, 8)))


def test_slmp_frame_major_branch_is_causal():
    slmp = B.SLMP(3, rng())
    slmp.scan.active = (0,)
    x = rng(6).normal(size=(4, 3, 4, 4))
    base = slmp(Tensor(x)).data
    x[2] += rng(7).normal(size=(3, 4, 4))
    out = slmp(Tensor(x)).data
    np.testing.assert_array_equal(out[:2], base[:2])
    assert np.abs(out[2:] - base[2:]).max() > 1e-6


def test_static_video_rows_and_position_major_branch():
    frame = rng(8).normal(size=(1, 3, 4, 4))
    x = Tensor(np.repeat(frame, 4, axis=0)[None])
    slmp = B.SLMP(3, rng())
    tok = B._clip_tokens(x).data[0].reshape(4, 16, 3)
    assert all(np.array_equal(tok[0], tok[t]) for t in range(4))
    # position-major scan: each column is constant over frames; with A_bar forced to 0
    # the recurrence carries nothing across frames, so every frame gets the same output.
    slmp.scan.active = (1,)
    forbid_memory(slmp.scan, 1)
    out = slmp(x).data[0]
    for t in range(1, 4):
        np.testing.assert_allclose(out[t], out[0], atol=1e-12)


def test_flmp_contract_gate_and_static_video():
    flmp = B.FLMP(4, rng())
    x = clip((5, 4, 8, 8))
    out = flmp(x)
    assert out.shape == (5, 4, 8, 8) and np.all(np.isfinite(out.data))
    amp, phase = F.to_polar(*F.fft2c(x))
    motion = flmp.phase_motion(T.reshape(phase, (1,) + phase.shape))
    gate = T.sigmoid(flmp.mfm(motion, T.reshape(amp, motion.shape))).data
    assert np.all(gate > 0) and np.all(gate < 1)
    assert np.all(gate * amp.data[None] <= amp.data[None])

    still = Tensor(np.repeat(rng(9).normal(size=(1, 4, 8, 8)), 3, axis=0)[None])
    _, ph = F.to_polar(*F.fft2c(still))
    rows = B._clip_tokens(ph).data[0].reshape(3, 64, 4)
    assert np.array_equal(rows[0], rows[1]) and np.array_equal(rows[0], rows[2])
    flmp.scan.active = (1,)
    forbid_memory(flmp.scan, 1)
    pm = flmp.phase_motion(ph).data[0]
    np.testing.assert_allclose(pm[1], pm[0], atol=1e-12)
    np.testing.assert_allclose(pm[2], pm[0], atol=1e-12)


def test_sfmf_contract_and_order_sensitivity():
    fuse = B.SFMF(4, rng())
    a, b = clip((5, 4, 8, 8), 10), clip((5, 4, 8, 8), 11)
    out = fuse(a, b)
    assert out.shape == (5, 4, 8, 8)
    assert np.abs(out.data - fuse(b, a).data).max() > 1e-3
    assert fuse(clip((2, 5, 4, 4, 4)), clip((2, 5, 4, 4, 4), 2)).shape == (2, 5, 4, 4, 4)
    with pytest.raises(ShapeError):
        fuse(a, clip((5, 4, 8, 4)))


def test_mfm_zero_b_uses_only_a_tokens():
    mfm = B.MFM(3, rng())
    zero = Tensor(np.zeros((2, 3, 4, 4)))
    assert np.all(mfm.norm_b(B._tokens(zero)).data == 0)
    a1, a2 = clip((2, 3, 4, 4), 12), clip((2, 3, 4, 4), 13)
    assert np.abs(mfm(a1, zero).data - mfm(a2, zero).data).max() > 1e-6
    np.testing.assert_array_equal(mfm(a1, zero).data, mfm(a1, Tensor(np.zeros((2, 3, 4, 4)))).data)


def test_ablation_stand_ins():
    a, b = clip((3, 4, 4, 4), 14), clip((3, 4, 4, 4), 15)
    for mod in (B.ConvFusion(4, rng()), B.CrossAttentionFusion(4, rng()), B.SumFusion()):
        assert mod(a, b).shape == a.shape
    c3 = B.Conv3dMotion(4, rng())
    assert c3(a).shape == a.shape
    with pytest.raises(TooFewFrames):
        c3(clip((1, 4, 4, 4)))


BUILDERS = {
    "rfvss": lambda c, g: B.RFVSS(c, g, state=2, expansion=2),
    "vss": lambda c, g: B.VSSBlock(c, g, state=2, ffn="plain", expansion=2),
    "afe": lambda c, g: B.AFE(c, g, state=2),
    "dse": B.DSE,
    "slmp": lambda c, g: B.SLMP(c, g, state=2),
    "flmp": lambda c, g: B.FLMP(c, g, state=2),
}


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(sorted(BUILDERS)), st.integers(1, 5), st.integers(2, 4), st.integers(1, 6),
       st.integers(1, 6), st.integers(0, 2**31))
def test_blocks_preserve_shape_and_stay_finite(name, c, n, h, w, seed):
    mod = BUILDERS[name](c, rng(seed))
    x = Tensor(np.random.default_rng(seed + 1).uniform(-10, 10, (n, c, h, w)))
    out = mod(x)
    assert out.shape == x.shape
    assert np.all(np.isfinite(out.data))


@settings(max_examples=6, deadline=None)
@given(st.integers(1, 4), st.integers(2, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_fusion_shape_property(c, n, hw, seed):
    fuse = B.SFMF(c, rng(seed), state=2)
    a = Tensor(np.random.default_rng(seed).uniform(-10, 10, (n, c, hw, hw)))
    out = fuse(a, a * 0.5)
    assert out.shape == a.shape and np.all(np.isfinite(out.data))


@pytest.mark.parametrize("name", sorted(n for n in BLOCKS if n != "vcamba"))
def test_block_gradcheck(name):
    assert check_block(name) <= tolerance(name)


def test_spatiotemporal_path_count_matches_scan():
    assert len(spatiotemporal_paths(3, 4)) == B.SLMP(2, rng()).scan.ssm.directions
