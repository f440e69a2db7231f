"""Per-image saliency measures: MAE, F-measure, E-measure and S-measure.

All functions take ``pred`` as an HxW float map in [0, 1] and ``gt`` as an
HxW binary map. Binarization sweeps use the 256 thresholds ``k/255`` with
the predicate ``pred >= t``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _backend

THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0
BETA2 = 0.3
ALPHA = 0.5


class FMeasure(NamedTuple):
    precision: np.ndarray
    recall: np.ndarray
    curve: np.ndarray
    f_max: float
    f_mean: float
    gt_empty: bool


class EMeasure(NamedTuple):
    curve: np.ndarray
    e_max: float
    e_mean: float


def _prepare(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if not np.all(np.isfinite(pred)):
        raise ValueError("prediction contains non-finite values")
    return pred, gt.astype(bool)


def mae(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def sweep_counts(pred, gt):
    """Per-threshold true/false positive counts and the foreground total."""
    pred, gt = _prepare(pred, gt)
    fg, bg = _backend.threshold_histograms(
        np.ascontiguousarray(pred.ravel()),
        np.ascontiguousarray(gt.ravel().view(np.uint8)),
        THRESHOLDS,
    )
    # pixels at level >= k are positive at threshold k
    tp = np.cumsum(fg[::-1])[::-1]
    fp = np.cumsum(bg[::-1])[::-1]
    return tp, fp, int(gt.sum()), gt.size


def _f_from_counts(tp, fp, n_fg):
    tp = tp.astype(np.float64)
    pos = tp + fp
    precision = np.divide(tp, pos, out=np.zeros_like(tp), where=pos > 0)
    recall = tp / n_fg if n_fg else np.zeros_like(tp)
    num = (1 + BETA2) * precision * recall
    den = BETA2 * precision + recall
    f = np.divide(num, den, out=np.zeros_like(tp), where=den > 0)
    return precision, recall, f


def f_measure(pred, gt) -> FMeasure:
    tp, fp, n_fg, _ = sweep_counts(pred, gt)
    if n_fg == 0:
        z = np.zeros(len(THRESHOLDS))
        return FMeasure(z, z.copy(), z.copy(), 0.0, 0.0, True)
    precision, recall, f = _f_from_counts(tp, fp, n_fg)
    return FMeasure(precision, recall, f, float(f.max()), float(f.mean()), False)


def _e_from_counts(tp, fp, n_fg, n):
    n_pos = (tp + fp).astype(np.float64)
    if n_fg == 0:
        curve = (n - n_pos) / n
    elif n_fg == n:
        curve = n_pos / n
    else:
        mu_g = n_fg / n
        mu_b = n_pos / n
        curve = np.zeros_like(n_pos)
        # four (gt, binarized) value combinations and their pixel counts
        for g, b, count in ((1.0, 1.0, tp), (1.0, 0.0, n_fg - tp),
                            (0.0, 1.0, fp), (0.0, 0.0, n - n_fg - fp)):
            dg = g - mu_g
            db = b - mu_b
            xi = 2.0 * dg * db / (dg * dg + db * db)  # dg != 0, so no zero denominator
            curve += count * (xi + 1.0) ** 2 / 4.0
        curve /= n
    return curve


def e_measure(pred, gt) -> EMeasure:
    tp, fp, n_fg, n = sweep_counts(pred, gt)
    curve = _e_from_counts(tp, fp, n_fg, n)
    return EMeasure(curve, float(curve.max()), float(curve.mean()))


# ---------------------------------------------------------------- S-measure

def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    return 2.0 * x / (x * x + 1.0 + values.std())


def _object_term(pred, gt) -> float:
    n_fg = int(gt.sum())
    n_bg = gt.size - n_fg
    o_fg = _object_score(pred[gt])
    o_bg = _object_score(1.0 - pred[~gt])
    return (n_fg * o_fg + n_bg * o_bg) / gt.size


def _centroid(gt):
    # 1-based centroid rounded half away from zero; the split puts the
    # centroid row/col in the top/left blocks.
    rows, cols = np.nonzero(gt)
    return int(np.floor(cols.mean() + 0.5)) + 1, int(np.floor(rows.mean() + 0.5)) + 1


def _ssim(p, g) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    d = max(n - 1, 1)
    sx2 = ((p - x) ** 2).sum() / d
    sy2 = ((g - y) ** 2).sum() / d
    sxy = ((p - x) * (g - y)).sum() / d
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx2 + sy2)
    if beta == 0:
        return 1.0
    return alpha / beta


def _region_term(pred, gt) -> float:
    h, w = gt.shape
    cx, cy = _centroid(gt)
    g = gt.astype(np.float64)
    total = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p_blk, g_blk = pred[rs, cs], g[rs, cs]
        if p_blk.size:
            total += p_blk.size * _ssim(p_blk, g_blk)
    return total / gt.size


def s_measure(pred, gt, alpha: float = ALPHA) -> float:
    pred, gt = _prepare(pred, gt)
    mu = gt.mean()
    if mu == 0:
        score = 1.0 - pred.mean()
    elif mu == 1:
        score = pred.mean()
    else:
        score = alpha * _object_term(pred, gt) + (1 - alpha) * _region_term(pred, gt)
    return float(min(max(score, 0.0), 1.0))
