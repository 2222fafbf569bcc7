"""Network blocks: VSS/RFVSS, DSE, AFE, SLMP, FLMP, MFM/SFMF and ablation stand-ins.

Public block inputs are channel-first. Per-frame blocks take (M, C, H, W);
temporal blocks take a clip (N, C, H, W) or a batch of clips (B, N, C, H, W)
and return the same layout they were given.
"""

from __future__ import annotations

import math

import numpy as np

from . import frequency as F
from . import tensor as T
from .errors import ShapeError, TooFewFrames
from .nn import (FFN, RFFFN, Conv2d, LayerNorm, Linear, Module, to_channels_first,
                 to_channels_last)
from .scan_paths import (cross_merge, cross_scan, cross_scan_paths, dual_domain_paths,
                         spatiotemporal_paths, spiral_scan_path)
from .ssm import S6
from .tensor import Tensor


def _as_clips(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim == 5:
        return x, False
    raise ShapeError(f"expected (N,C,H,W) or (B,N,C,H,W), got {x.shape}")


def _restore(x: Tensor, squeezed: bool) -> Tensor:
    return T.reshape(x, x.shape[1:]) if squeezed else x


def _check_frames(n: int) -> None:
    if n < 2:
        raise TooFewFrames(f"motion blocks need at least 2 frames, got {n}")


def _tokens(x: Tensor) -> Tensor:
    """(M, C, H, W) -> (M, HW, C)."""
    m, c, h, w = x.shape
    return T.reshape(to_channels_last(x), (m, h * w, c))


def _untokens(t: Tensor, h: int, w: int) -> Tensor:
    """(M, HW, C) -> (M, C, H, W)."""
    m, _, c = t.shape
    return to_channels_first(T.reshape(t, (m, h, w, c)))


def _clip_tokens(x: Tensor) -> Tensor:
    """(B, N, C, H, W) -> spatio-temporal token map (B, N*HW, C), frame-major."""
    b, n, c, h, w = x.shape
    return T.reshape(T.transpose(x, (0, 1, 3, 4, 2)), (b, n * h * w, c))


def _clip_untokens(t: Tensor, n: int, h: int, w: int) -> Tensor:
    b, _, c = t.shape
    return T.transpose(T.reshape(t, (b, n, h, w, c)), (0, 1, 4, 2, 3))


class DirectionalSSM(Module):
    """Serialize tokens along K paths, run one S6 per path, merge back by summation."""

    def __init__(self, dim: int, rng: np.random.Generator, state: int, directions: int):
        self.ssm = S6(dim, rng, state=state, directions=directions)
        self.active: tuple[int, ...] | None = None

    def forward(self, tokens: Tensor, paths) -> Tensor:
        if len(paths) != self.ssm.directions:
            raise ShapeError(f"{len(paths)} paths for {self.ssm.directions} directions")
        seqs = self.ssm(cross_scan(tokens, paths, axis=-2))
        if self.active is not None:
            keep = list(self.active)
            seqs = T.getitem(seqs, (np.asarray(keep),))
            paths = [paths[i] for i in keep]
        return cross_merge(seqs, paths, axis=-2)


class VSSBlock(Module):
    """Cross-scan SSM path then FFN, both residual.

    ``ffn="rf"`` gives the receptive-field variant (RFVSS); ``"plain"`` the
    ordinary two-layer FFN used by decoder layers.
    """

    def __init__(self, dim: int, rng: np.random.Generator, state: int = 8, ffn: str = "rf",
                 expansion: int = 4, kernels=(1, 3, 5, 7)):
        self.norm1 = LayerNorm(dim)
        self.scan = DirectionalSSM(dim, rng, state, 4)
        self.out_proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        if ffn == "rf":
            self.ffn = RFFFN(dim, rng, expansion, kernels)
        elif ffn == "plain":
            self.ffn = FFN(dim, rng, expansion)
        else:
            raise ValueError(f"unknown ffn kind {ffn!r}")

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"VSSBlock expects (M, C, H, W), got {x.shape}")
        m, c, h, w = x.shape
        tok = _tokens(x)
        tok = tok + self.out_proj(self.scan(self.norm1(tok), cross_scan_paths(h, w)))
        grid = T.reshape(tok, (m, h, w, c))
        grid = grid + self.ffn(self.norm2(grid))
        return to_channels_first(grid)


def RFVSS(dim: int, rng: np.random.Generator, state: int = 8, expansion: int = 4,
          kernels=(1, 3, 5, 7)) -> VSSBlock:
    return VSSBlock(dim, rng, state, "rf", expansion, kernels)


class DSE(Module):
    """Temporal differences followed by per-frame attention across channels.

    With the difference map as an (HW, C) matrix ``D``, the output is
    ``D W_V S`` where ``S = softmax((D W_K)^T (D W_Q) / sqrt(HW))`` is a C x C
    matrix normalised over its first axis, so every output channel is a convex
    mix of value channels at the same position.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        self.w_q = Linear(dim, dim, rng, bias=False)
        self.w_k = Linear(dim, dim, rng, bias=False)
        self.w_v = Linear(dim, dim, rng, bias=False)

    @staticmethod
    def differences(x: Tensor) -> Tensor:
        n = x.shape[1]
        forward = x[:, 1:] - x[:, :-1]
        last = x[:, n - 1:n] - x[:, n - 2:n - 1]
        return T.concat([forward, last], axis=1)

    def forward(self, frames: Tensor) -> Tensor:
        x, squeezed = _as_clips(frames)
        b, n, c, h, w = x.shape
        _check_frames(n)
        d = self.differences(x)
        tok = T.reshape(T.transpose(d, (0, 1, 3, 4, 2)), (b * n, h * w, c))
        q, k, v = self.w_q(tok), self.w_k(tok), self.w_v(tok)
        att = T.softmax((T.swapaxes(k, -1, -2) @ q) * (1.0 / math.sqrt(h * w)), axis=-2)
        out = T.reshape(v @ att, (b, n, h, w, c))
        return _restore(T.transpose(out, (0, 1, 4, 2, 3)), squeezed)


class DualDomainFusion(Module):
    """Fuse two aligned feature maps through sequence-level and point-level concatenation.

    Both token sets are laid out [a; b] (a C x 2H x W map), serialized
    end-to-end and interleaved, scanned by one S6 each, restored and summed,
    then linear + FFN, and finally the halves are channel-stacked and reduced
    by a 3x3 convolution. Serves as SFMF (spatial, frequency) and as MFM
    (phase motion, amplitude).
    """

    def __init__(self, dim: int, rng: np.random.Generator, state: int = 8, expansion: int = 2):
        self.norm_a = LayerNorm(dim)
        self.norm_b = LayerNorm(dim)
        self.scan = DirectionalSSM(dim, rng, state, 2)
        self.proj = Linear(dim, dim, rng)
        self.norm_f = LayerNorm(dim)
        self.ffn = FFN(dim, rng, expansion)
        self.conv = Conv2d(2 * dim, dim, 3, rng)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"fusion inputs differ: {a.shape} vs {b.shape}")
        lead = a.shape[:-3]
        if a.ndim != 4:
            a = T.reshape(a, (-1,) + a.shape[-3:])
            b = T.reshape(b, (-1,) + b.shape[-3:])
        m, c, h, w = a.shape
        hw = h * w
        tok = T.concat([self.norm_a(_tokens(a)), self.norm_b(_tokens(b))], axis=1)
        paths = dual_domain_paths(hw)
        y = self.scan(tok, (paths["seq2seq"], paths["point2point"]))
        y = self.proj(y)
        y = y + self.ffn(self.norm_f(y))
        top = _untokens(y[:, :hw], h, w)
        bottom = _untokens(y[:, hw:], h, w)
        out = self.conv(T.concat([top, bottom], axis=1))
        return T.reshape(out, lead + (c, h, w))


SFMF = DualDomainFusion
MFM = DualDomainFusion


class AFE(Module):
    """Spectral enhancement: SSMs over spiral-ordered frequency bins, residual in the spectrum.

    Each bin is a 2C-vector of stacked (real, imag) parts. ``scan="cross"``
    swaps the two spiral orders for the four cross-scan paths.
    """

    def __init__(self, dim: int, rng: np.random.Generator, state: int = 8, scan: str = "spiral",
                 zero_out: bool = False):
        if scan not in ("spiral", "cross"):
            raise ValueError(f"unknown AFE scan {scan!r}")
        self.scan_kind = scan
        k = 2 if scan == "spiral" else 4
        self.norm = LayerNorm(2 * dim)
        self.scan = DirectionalSSM(2 * dim, rng, state, k)
        self.out_proj = Linear(2 * dim, 2 * dim, rng, zero=zero_out)

    def paths(self, h: int, w: int):
        if self.scan_kind == "spiral":
            return (spiral_scan_path(h, w, "low2high"), spiral_scan_path(h, w, "high2low"))
        return cross_scan_paths(h, w)

    def forward(self, x: Tensor) -> Tensor:
        shape = x.shape
        x = T.reshape(x, (-1,) + shape[-3:])
        m, c, h, w = x.shape
        re, im = F.fft2c(x)
        spec = _tokens(T.concat([re, im], axis=1))
        paths = self.paths(h, w)
        enhanced = self.scan(self.norm(spec), paths) * (1.0 / len(paths))
        spec = spec + self.out_proj(enhanced)
        grid = _untokens(spec, h, w)
        out = F.ifft2c(grid[:, :c], grid[:, c:])
        return T.reshape(out, shape)


class SLMP(Module):
    """Four-direction SSM over the spatio-temporal map, then FFN and a per-frame 3x3 conv."""

    def __init__(self, dim: int, rng: np.random.Generator, state: int = 8, expansion: int = 2):
        self.norm = LayerNorm(dim)
        self.scan = DirectionalSSM(dim, rng, state, 4)
        self.norm_f = LayerNorm(dim)
        self.ffn = FFN(dim, rng, expansion)
        self.conv = Conv2d(dim, dim, 3, rng)

    def forward(self, frames: Tensor) -> Tensor:
        x, squeezed = _as_clips(frames)
        b, n, c, h, w = x.shape
        _check_frames(n)
        tok = _clip_tokens(x)
        m = self.scan(self.norm(tok), spatiotemporal_paths(n, h * w))
        m = m + self.ffn(self.norm_f(m))
        per_frame = T.reshape(_clip_untokens(m, n, h, w), (b * n, c, h, w))
        out = x + T.reshape(self.conv(per_frame), (b, n, c, h, w))
        return _restore(out, squeezed)


class FLMP(Module):
    """Phase-domain motion: SSMs over the stacked phase maps, amplitude gated by fusion."""

    def __init__(self, dim: int, rng: np.random.Generator, state: int = 8):
        self.scan = DirectionalSSM(dim, rng, state, 4)
        self.out_proj = Linear(dim, dim, rng)
        self.mfm = MFM(dim, rng, state)

    def phase_motion(self, phase: Tensor) -> Tensor:
        """Phase maps (B, N, C, H, W) -> phase motion features of the same shape."""
        b, n, c, h, w = phase.shape
        tok = _clip_tokens(phase)
        tok = tok + self.out_proj(self.scan(tok, spatiotemporal_paths(n, h * w)))
        return _clip_untokens(tok, n, h, w)

    def forward(self, frames: Tensor) -> Tensor:
        x, squeezed = _as_clips(frames)
        b, n, c, h, w = x.shape
        _check_frames(n)
        amp, phase = F.to_polar(*F.fft2c(x))
        motion = self.phase_motion(phase)
        gate = T.sigmoid(self.mfm(motion, amp))
        guided = gate * amp
        out = F.ifft2c(*F.from_polar(guided, motion))
        return _restore(out, squeezed)


# ---------------------------------------------------------------------------
# ablation stand-ins


class ConvFusion(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.conv = Conv2d(2 * dim, dim, 3, rng)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        a4 = T.reshape(a, (-1,) + a.shape[-3:])
        b4 = T.reshape(b, (-1,) + b.shape[-3:])
        return T.reshape(self.conv(T.concat([a4, b4], axis=1)), a.shape)


class CrossAttentionFusion(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.w_q = Linear(dim, dim, rng, bias=False)
        self.w_k = Linear(dim, dim, rng, bias=False)
        self.w_v = Linear(dim, dim, rng, bias=False)
        self.proj = Linear(dim, dim, rng)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        a4 = T.reshape(a, (-1,) + a.shape[-3:])
        b4 = T.reshape(b, (-1,) + b.shape[-3:])
        _, c, h, w = a4.shape
        ta, tb = _tokens(a4), _tokens(b4)
        att = T.softmax((self.w_q(ta) @ T.swapaxes(self.w_k(tb), -1, -2)) * (1.0 / math.sqrt(c)), -1)
        out = ta + self.proj(att @ self.w_v(tb))
        return T.reshape(_untokens(out, h, w), a.shape)


class SumFusion(Module):
    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        return a + b


class Conv3dMotion(Module):
    """3x3x3 convolution over (frame, row, col) with a residual; replaces an SSM motion block."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.conv = Conv2d(3 * dim, dim, 3, rng)

    def forward(self, frames: Tensor) -> Tensor:
        x, squeezed = _as_clips(frames)
        b, n, c, h, w = x.shape
        _check_frames(n)
        padded = T.pad(x, ((0, 0), (1, 1), (0, 0), (0, 0), (0, 0)))
        stacked = T.concat([padded[:, 0:n], padded[:, 1:n + 1], padded[:, 2:n + 2]], axis=2)
        out = self.conv(T.reshape(stacked, (b * n, 3 * c, h, w)))
        return _restore(x + T.reshape(out, x.shape), squeezed)
