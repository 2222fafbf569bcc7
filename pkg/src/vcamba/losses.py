"""Hybrid segmentation loss (weighted BCE + weighted IoU + enhanced alignment) and its pyramid sum."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

CLAMP = 1e-7
ALIGN_EPS = 1e-8


def pixel_weights(gt) -> np.ndarray:
    """w = 1 + 5 |avgpool31(gt) - gt| per (H, W) map; zero padding counted in the average."""
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    size = [1] * (gt.ndim - 2) + [31, 31]
    pooled = uniform_filter(gt, size=size, mode="constant", cval=0.0)
    return 1.0 + 5.0 * np.abs(pooled - gt)


def hybrid_terms(pred, gt) -> tuple[Tensor, Tensor, Tensor]:
    """Per-map (bce_w, iou_w, align) losses reduced over the last two axes."""
    pred = T.as_tensor(pred)
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if pred.shape != g.shape:
        raise ShapeError(f"pred {pred.shape} and gt {g.shape} differ")
    if pred.ndim < 2:
        raise ShapeError("hybrid loss needs (..., H, W) maps")
    axes = (-2, -1)
    w = pixel_weights(g)
    wsum = w.sum(axis=axes)
    p = T.clamp(pred, CLAMP, 1.0 - CLAMP)

    bce = -(T.log(p) * g + T.log(1.0 - p) * (1.0 - g))
    l_bce = T.tsum(bce * w, axis=axes) / wsum

    inter = T.tsum(p * (g * w), axis=axes)
    union = T.tsum((p + g - p * g) * w, axis=axes)
    # an empty gt leaves inter = 0; score the weighted false-positive mass instead
    empty = np.asarray(g.sum(axis=axes) == 0, dtype=np.float64)
    l_iou = (1.0 - inter / union) * (1.0 - empty) + (T.tsum(p * w, axis=axes) / wsum) * empty

    return l_bce, l_iou, _alignment_loss(p, g)


def _alignment_loss(p: Tensor, g: np.ndarray) -> Tensor:
    axes = (-2, -1)
    g_mean = g.mean(axis=axes, keepdims=True)
    dg = g - g_mean
    dp = p - T.mean(p, axis=axes, keepdims=True)
    xi = (dp * dg * 2.0) / (dp * dp + dg * dg + ALIGN_EPS)
    phi = (xi + 1.0) ** 2 * 0.25
    # constant gt: alignment reduces to agreement with the single class
    fg = g_mean[..., 0, 0]
    phi_mean = T.mean(phi, axis=axes)
    p_mean = T.mean(p, axis=axes)
    empty = np.asarray(fg == 0.0, dtype=np.float64)
    full = np.asarray(fg == 1.0, dtype=np.float64)
    regular = 1.0 - empty - full
    score = phi_mean * regular + (1.0 - p_mean) * empty + p_mean * full
    return 1.0 - score


def hybrid_loss(pred, gt) -> Tensor:
    """Scalar hybrid loss, summed over any leading map axes."""
    l_bce, l_iou, l_e = hybrid_terms(pred, gt)
    return T.tsum(l_bce + l_iou + l_e)


def total_loss(pyramid, gts) -> Tensor:
    """Sum of hybrid losses over levels and frames; averaged over a leading batch axis if present.

    ``pyramid`` is a PredictionPyramid or a sequence of level tensors shaped
    (N, 1, H, W) or (B, N, 1, H, W); ``gts`` matches one level.
    """
    levels: Sequence[Tensor] = getattr(pyramid, "levels", pyramid)
    g = np.asarray(gts.data if isinstance(gts, Tensor) else gts, dtype=np.float64)
    if len(levels) == 0:
        raise ShapeError("empty pyramid")
    total = None
    for lv in levels:
        if lv.shape != g.shape:
            raise ShapeError(f"level {lv.shape} vs gt {g.shape}")
        term = hybrid_loss(lv, g)
        total = term if total is None else total + term
    if g.ndim == 5:
        total = total * (1.0 / g.shape[0])
    return total
