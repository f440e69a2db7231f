"""Brute-force reference implementations of the saliency measures.

These evaluate the textbook definitions directly: per-threshold
binarization followed by elementwise formulas, with a tiny epsilon guard
in every ratio instead of the case analysis used by the library.
"""
import math

import numpy as np

EPS = 1e-20
BETA2 = 0.3


def thresholds():
    return [k / 255.0 for k in range(256)]


def mae(pred, gt):
    h, w = gt.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += abs(float(pred[i, j]) - float(gt[i, j]))
    return total / (h * w)


def f_curve(pred, gt):
    g = gt.astype(bool)
    out = []
    for t in thresholds():
        b = pred >= t
        tp = float(np.sum(b & g))
        precision = tp / (np.sum(b) + EPS)
        recall = tp / (np.sum(g) + EPS)
        out.append((1 + BETA2) * precision * recall / (BETA2 * precision + recall + EPS))
    return np.array(out)


def e_curve(pred, gt):
    g = gt.astype(np.float64)
    n = g.size
    out = []
    for t in thresholds():
        b = (pred >= t).astype(np.float64)
        if g.sum() == 0:
            phi = 1.0 - b
        elif g.sum() == n:
            phi = b
        else:
            dg = g - g.mean()
            db = b - b.mean()
            xi = 2 * dg * db / (dg * dg + db * db + EPS)
            phi = (xi + 1) ** 2 / 4
        out.append(phi.sum() / n)
    return np.array(out)


def _obj(values):
    x = sum(values) / len(values)
    var = sum((v - x) ** 2 for v in values) / len(values)
    return 2 * x / (x * x + 1 + math.sqrt(var) + EPS)


def _ssim(p, g):
    n = p.size
    x, y = p.mean(), g.mean()
    sx = np.sum((p - x) ** 2) / (n - 1 + EPS)
    sy = np.sum((g - y) ** 2) / (n - 1 + EPS)
    sxy = np.sum((p - x) * (g - y)) / (n - 1 + EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    if a == 0 and b == 0:
        return 1.0
    return 0.0


def s_measure(pred, gt, alpha=0.5):
    g = gt.astype(bool)
    h, w = g.shape
    mu = g.mean()
    if mu == 0:
        return max(0.0, 1 - pred.mean())
    if mu == 1:
        return pred.mean()
    fg = [float(v) for v in pred[g]]
    bg = [1 - float(v) for v in pred[~g]]
    so = mu * _obj(fg) + (1 - mu) * _obj(bg)

    # centroid in 1-based pixel coordinates, rounded half up
    sx = sy = cnt = 0
    for i in range(h):
        for j in range(w):
            if g[i, j]:
                sx += j + 1
                sy += i + 1
                cnt += 1
    X = math.floor(sx / cnt + 0.5)
    Y = math.floor(sy / cnt + 0.5)
    gf = g.astype(np.float64)
    blocks = [(pred[:Y, :X], gf[:Y, :X]), (pred[:Y, X:], gf[:Y, X:]),
              (pred[Y:, :X], gf[Y:, :X]), (pred[Y:, X:], gf[Y:, X:])]
    w1 = X * Y / (h * w)
    w2 = (w - X) * Y / (h * w)
    w3 = X * (h - Y) / (h * w)
    w4 = 1 - w1 - w2 - w3
    sr = 0.0
    for wt, (pb, gb) in zip((w1, w2, w3, w4), blocks):
        if pb.size:
            sr += wt * _ssim(pb, gb)
    return min(1.0, max(0.0, alpha * so + (1 - alpha) * sr))


def random_pair(rng, size=16):
    """A (pred, gt) pair mixing blob-shaped and noisy ground truth."""
    kind = rng.integers(0, 10)
    if kind == 0:
        gt = np.zeros((size, size), np.uint8)
    elif kind == 1:
        gt = np.ones((size, size), np.uint8)
    else:
        gt = np.zeros((size, size), np.uint8)
        y0, x0 = rng.integers(0, size - 2, 2)
        y1, x1 = y0 + rng.integers(1, size - y0), x0 + rng.integers(1, size - x0)
        gt[y0:y1 + 1, x0:x1 + 1] = 1
        if kind > 6:
            gt ^= (rng.random((size, size)) < 0.1).astype(np.uint8)
    if rng.random() < 0.3:
        pred = rng.integers(0, 256, (size, size)) / 255.0  # exact threshold levels
    else:
        pred = np.clip(0.6 * gt + 0.5 * rng.random((size, size)) - 0.1, 0, 1)
    return pred, gt
