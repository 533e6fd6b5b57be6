# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch extraction/accumulation and nearest-code search.

Layouts match :mod:`vqdetect._pykernels` exactly; see that module for the
reference semantics.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n_img = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((chans * k * k, n_img * ho * wo), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, ki, kj, oi, oj, row, col, ii, jj
    with nogil:
        for c in range(chans):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for n in range(n_img):
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            col = (n * ho + oi) * wo
                            for oj in range(wo):
                                jj = oj * stride + kj - pad
                                if jj >= 0 and jj < w:
                                    out[row, col + oj] = x[n, c, ii, jj]
    return out_arr


def col2im(floating[:, ::1] cols, tuple shape, int k, int stride, int pad):
    cdef Py_ssize_t n_img = shape[0], chans = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    if cols.shape[0] != chans * k * k or cols.shape[1] != n_img * ho * wo:
        raise ValueError("column matrix does not match target shape")
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros(shape, dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, ki, kj, oi, oj, row, col, ii, jj
    with nogil:
        for c in range(chans):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for n in range(n_img):
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            col = (n * ho + oi) * wo
                            for oj in range(wo):
                                jj = oj * stride + kj - pad
                                if jj >= 0 and jj < w:
                                    out[n, c, ii, jj] += cols[row, col + oj]
    return out_arr


def nearest_code(floating[:, ::1] latents, floating[:, ::1] codebook):
    cdef Py_ssize_t n = latents.shape[0], d = latents.shape[1]
    cdef Py_ssize_t n_codes = codebook.shape[0]
    if codebook.shape[1] != d:
        raise ValueError("latent and codebook dimensions differ")
    if n_codes == 0:
        raise ValueError("empty codebook")
    idx_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef Py_ssize_t i, j, t, best_j
    cdef double best, acc, diff
    with nogil:
        for i in range(n):
            best = 1e300
            best_j = 0
            for j in range(n_codes):
                acc = 0.0
                for t in range(d):
                    diff = <double>latents[i, t] - <double>codebook[j, t]
                    acc = acc + diff * diff
                    # partial sums only grow; equal-or-worse can never win the strict test
                    if acc >= best:
                        break
                if acc < best:
                    best = acc
                    best_j = j
            idx[i] = best_j
    return idx_arr
