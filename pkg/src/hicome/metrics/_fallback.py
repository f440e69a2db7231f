"""Pure-numpy twin of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def threshold_histograms(pred, gt, thresholds):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.uint8)
    if gt.shape != pred.shape:
        raise ValueError("pred and gt lengths differ")
    m = len(thresholds)
    level = np.searchsorted(thresholds, pred, side="right") - 1
    keep = level >= 0
    fg = np.bincount(level[keep & (gt != 0)], minlength=m).astype(np.int64)
    bg = np.bincount(level[keep & (gt == 0)], minlength=m).astype(np.int64)
    return fg, bg
