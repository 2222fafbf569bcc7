"""Six mask-quality metrics: S-alpha, weighted F, mean E-phi, MAE, mDice, mIoU (numpy, no autodiff)."""

from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

from .errors import ShapeError

COLUMNS = ("S_alpha", "F_beta_w", "E_phi", "MAE", "mDice", "mIoU")
EPS = np.spacing(1.0)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} and gt {g.shape} differ")
    if p.ndim != 2:
        raise ShapeError(f"metrics take single H x W maps, got {p.shape}")
    return np.clip(p, 0.0, 1.0), g > 0.5


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).mean())


# -- structure measure ------------------------------------------------------


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sd + EPS)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    mx, my = p.mean(), g.mean()
    dx, dy = p - mx, g - my
    vx = (dx * dx).sum() / (n - 1 + EPS)
    vy = (dy * dy).sum() / (n - 1 + EPS)
    cxy = (dx * dy).sum() / (n - 1 + EPS)
    num = 4.0 * mx * my * cxy
    den = (mx * mx + my * my) * (vx + vy)
    if num != 0:
        return num / (den + EPS)
    return 1.0 if den == 0 else 0.0


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: object-aware and region-aware similarity, blended by ``alpha``."""
    p, g = _pair(pred, gt)
    fg = g.mean()
    if fg == 0:
        return float(1.0 - p.mean())
    if fg == 1:
        return float(p.mean())
    obj = fg * _object_score(p[g]) + (1 - fg) * _object_score(1.0 - p[~g])

    h, w = g.shape
    cy, cx = np.round(np.argwhere(g).mean(axis=0)).astype(int) + 1
    region = 0.0
    for rows in (slice(0, cy), slice(cy, h)):
        for cols in (slice(0, cx), slice(cx, w)):
            block = g[rows, cols]
            region += _ssim(p[rows, cols], block.astype(np.float64)) * block.size / (h * w)
    return float(max(0.0, alpha * obj + (1 - alpha) * region))


# -- weighted F -------------------------------------------------------------


def _gaussian(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k[k < np.finfo(float).eps * k.max()] = 0
    return k / k.sum()


def weighted_f(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure with distance-dependent error weights."""
    p, g = _pair(pred, gt)
    if not g.any():
        return 1.0 if not p.any() else 0.0
    dist, (iy, ix) = distance_transform_edt(~g, return_indices=True)
    err = np.abs(p - g)
    spread = err.copy()
    bg = ~g
    spread[bg] = err[iy[bg], ix[bg]]
    smooth = convolve(spread, _gaussian(), mode="constant", cval=0.0)
    err_min = np.where(g & (smooth < err), smooth, err)
    importance = np.where(bg, 2.0 - np.exp(np.log(0.5) / 5.0 * dist), 1.0)
    ew = err_min * importance
    tp = g.sum() - ew[g].sum()
    fp = ew[bg].sum()
    recall = 1.0 - ew[g].mean()
    precision = tp / (tp + fp + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


# -- enhanced alignment -----------------------------------------------------


def _phi(a: float, b: float) -> float:
    xi = 2.0 * a * b / (a * a + b * b + EPS)
    return (xi + 1.0) ** 2 / 4.0


def e_measure(pred, gt) -> float:
    """Mean enhanced-alignment score over thresholds k/255, k = 1..255."""
    p, g = _pair(pred, gt)
    size = g.size
    n_fg = int(g.sum())
    thresholds = np.arange(1, 256) / 255.0
    scores = np.empty(thresholds.size)
    g_mean = n_fg / size
    for i, t in enumerate(thresholds):
        b = p >= t
        n_pred = int(b.sum())
        if n_fg == 0:
            scores[i] = (size - n_pred) / size
            continue
        if n_fg == size:
            scores[i] = n_pred / size
            continue
        tp = int((b & g).sum())
        fp = n_pred - tp
        fn = n_fg - tp
        tn = size - tp - fp - fn
        b_mean = n_pred / size
        total = 0.0
        for count, bv, gv in ((tp, 1, 1), (fp, 1, 0), (fn, 0, 1), (tn, 0, 0)):
            if count:
                total += count * _phi(bv - b_mean, gv - g_mean)
        scores[i] = total / size
    return float(scores.mean())


# -- overlap ----------------------------------------------------------------


def binarize(pred) -> np.ndarray:
    """Adaptive binarization at min(2 * mean, 1); all-zero maps stay empty."""
    p = np.asarray(pred, dtype=np.float64)
    thr = min(2.0 * p.mean(), 1.0)
    return (p >= thr) & (p > 0)


def dice_iou(pred_bin, gt) -> tuple[float, float]:
    b = np.asarray(pred_bin, dtype=bool)
    g = np.asarray(gt) > 0.5
    if b.shape != g.shape:
        raise ShapeError(f"pred {b.shape} and gt {g.shape} differ")
    inter = int((b & g).sum())
    nb, ng = int(b.sum()), int(g.sum())
    if nb + ng == 0:
        return 1.0, 1.0
    return 2.0 * inter / (nb + ng), inter / (nb + ng - inter)


def evaluate(pred, gt) -> dict[str, float]:
    """All six metrics for one (H, W) prediction / ground-truth pair."""
    p, g = _pair(pred, gt)
    dice, iou = dice_iou(binarize(p), g)
    return {
        "S_alpha": s_measure(p, g),
        "F_beta_w": weighted_f(p, g),
        "E_phi": e_measure(p, g),
        "MAE": mae(p, g),
        "mDice": dice,
        "mIoU": iou,
    }


def mean_scores(rows: Iterable[dict[str, float]]) -> dict[str, float]:
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to average")
    return {k: float(np.mean([r[k] for r in rows])) for k in COLUMNS}
