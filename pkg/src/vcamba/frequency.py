"""Centred 2D spectra: amplitude/phase split, recombination and band energy.

Forward transforms are unnormalized; inverses carry the 1/(HW) factor. After
centring, DC sits at (H//2, W//2). The tensor-level functions (``fft2c``,
``ifft2c``, ``to_polar``, ``from_polar``) are differentiable and used inside
the network blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BadRange, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class Spectrum:
    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.amplitude.shape

    def complex(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)


def _mirror(z: np.ndarray) -> np.ndarray:
    """z[..., (-u) mod H, (-v) mod W] for an uncentred spectrum."""
    return np.roll(z[..., ::-1, ::-1], shift=(1, 1), axis=(-2, -1))


def _real_spectrum(x: np.ndarray) -> np.ndarray:
    """Uncentred DFT of a real array, projected onto exact conjugate symmetry.

    The projection is the identity in exact arithmetic; it makes the imaginary
    part at self-conjugate bins exactly zero, which pins their phase.
    """
    z = np.fft.fft2(x)
    return 0.5 * (z + np.conj(_mirror(z)))


def polar(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    amp = np.abs(z)
    phase = np.where(amp > 0, np.angle(z), 0.0)
    phase = np.where(phase == -np.pi, np.pi, phase)
    return amp, phase


def fft2_centered(x) -> Spectrum:
    """Channel-wise 2D DFT of a real (..., H, W) array, DC moved to the centre."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError("fft2_centered needs at least two axes")
    z = np.fft.fftshift(_real_spectrum(x), axes=(-2, -1))
    amp, phase = polar(z)
    return Spectrum(amp, phase)


def ifft2_from_amp_phase(amplitude, phase) -> np.ndarray:
    """Recombine a centred (amplitude, phase) pair and return the real part of the inverse DFT."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise ShapeError(f"amplitude {amplitude.shape} and phase {phase.shape} differ")
    z = np.fft.ifftshift(amplitude * np.exp(1j * phase), axes=(-2, -1))
    return np.fft.ifft2(z).real


def chebyshev_radius(h: int, w: int) -> np.ndarray:
    rows = np.abs(np.arange(h) - h // 2)[:, None]
    cols = np.abs(np.arange(w) - w // 2)[None, :]
    return np.maximum(rows, cols)


def band_energy(spec: Spectrum, r0: float, r1: float) -> float:
    """Sum of amplitude^2 over cells whose Chebyshev radius from DC lies in [r0, r1)."""
    if not (0 <= r0 < r1):
        raise BadRange(f"need 0 <= r0 < r1, got [{r0}, {r1})")
    h, w = spec.shape[-2:]
    rad = chebyshev_radius(h, w)
    mask = (rad >= r0) & (rad < r1)
    return float((spec.amplitude**2 * mask).sum())


# ---------------------------------------------------------------------------
# differentiable counterparts


def fft2c(x: Tensor) -> tuple[Tensor, Tensor]:
    """Centred spectrum of a real tensor (..., H, W) as (real, imag) tensors."""
    x = T.as_tensor(x)
    z = np.fft.fftshift(_real_spectrum(x.data), axes=(-2, -1))

    def backward_pair(g_re, g_im):
        gz = np.fft.ifftshift(g_re - 1j * g_im, axes=(-2, -1))
        return np.fft.fft2(gz).real

    re = T.record(np.ascontiguousarray(z.real), (x,),
                  lambda g: (backward_pair(g, np.zeros_like(g)),))
    im = T.record(np.ascontiguousarray(z.imag), (x,),
                  lambda g: (backward_pair(np.zeros_like(g), g),))
    return re, im


def ifft2c(re: Tensor, im: Tensor) -> Tensor:
    """Real part of the inverse DFT of a centred (real, imag) spectrum."""
    re, im = T.as_tensor(re), T.as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError(f"real {re.shape} and imag {im.shape} differ")
    z = np.fft.ifftshift(re.data + 1j * im.data, axes=(-2, -1))
    out = np.fft.ifft2(z).real

    def backward(g):
        gz = np.fft.fftshift(np.fft.ifft2(g), axes=(-2, -1))
        return gz.real, -gz.imag

    return T.record(out, (re, im), backward)


def to_polar(re: Tensor, im: Tensor) -> tuple[Tensor, Tensor]:
    return T.hypot(re, im), T.atan2(im, re)


def from_polar(amp: Tensor, phase: Tensor) -> tuple[Tensor, Tensor]:
    return amp * T.cos(phase), amp * T.sin(phase)
