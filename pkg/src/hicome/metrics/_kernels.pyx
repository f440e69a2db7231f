# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled threshold-sweep kernel."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def threshold_histograms(const double[::1] pred, const unsigned char[::1] gt,
                         const double[::1] thresholds):
    """Histogram the threshold level of every pixel, split by gt label.

    The level of ``p`` is the largest ``k`` with ``p >= thresholds[k]``
    (-1 when below all; such pixels are dropped). Returns (fg, bg) int64
    arrays of length ``len(thresholds)``.
    """
    cdef Py_ssize_t n = pred.shape[0]
    cdef Py_ssize_t m = thresholds.shape[0]
    if gt.shape[0] != n:
        raise ValueError("pred and gt lengths differ")
    fg_arr = np.zeros(m, dtype=np.int64)
    bg_arr = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] fg = fg_arr
    cdef cnp.int64_t[::1] bg = bg_arr
    cdef Py_ssize_t i, k
    cdef double p, top = thresholds[m - 1], scale = <double>(m - 1)
    with nogil:
        for i in range(n):
            p = pred[i]
            if p < thresholds[0]:
                continue
            if p >= top:
                k = m - 1
            else:
                k = <Py_ssize_t>(p * scale)
                if k > m - 1:
                    k = m - 1
                while k < m - 1 and p >= thresholds[k + 1]:
                    k += 1
                while k > 0 and p < thresholds[k]:
                    k -= 1
            if gt[i]:
                fg[k] += 1
            else:
                bg[k] += 1
    return fg_arr, bg_arr
