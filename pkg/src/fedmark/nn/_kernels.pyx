# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution/pooling kernels.

Loop order matches the numpy fallback exactly (col2im accumulates in
(ki, kj)-major order; maxpool takes the first maximum), so both backends
produce bit-identical float results.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


def conv_out_size(int size, int kernel, int stride):
    return (size - kernel) // stride + 1


def im2col(real[:, :, :, ::1] x, int kernel, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kernel) // stride + 1
    cdef Py_ssize_t ow = (w - kernel) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n * oh * ow, c * kernel * kernel), dtype=dtype)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t bi, ch, i, j, ki, kj, row, col
    for bi in range(n):
        for i in range(oh):
            for j in range(ow):
                row = (bi * oh + i) * ow + j
                for ch in range(c):
                    for ki in range(kernel):
                        for kj in range(kernel):
                            col = (ch * kernel + ki) * kernel + kj
                            cols[row, col] = x[bi, ch, i * stride + ki, j * stride + kj]
    return out


def col2im(real[:, ::1] cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           int kernel, int stride):
    cdef Py_ssize_t oh = (h - kernel) // stride + 1
    cdef Py_ssize_t ow = (w - kernel) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t bi, ch, i, j, ki, kj, row, col
    # (ki, kj) outermost keeps per-cell accumulation order identical to the
    # numpy fallback's strided slice adds.
    for ki in range(kernel):
        for kj in range(kernel):
            for bi in range(n):
                for ch in range(c):
                    col = (ch * kernel + ki) * kernel + kj
                    for i in range(oh):
                        row = (bi * oh + i) * ow
                        for j in range(ow):
                            dx[bi, ch, i * stride + ki, j * stride + kj] += cols[row + j, col]
    return out


def maxpool_forward(real[:, :, :, ::1] x, int window):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // window, ow = w // window
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    idx_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t bi, ch, i, j, wi, wj, base_i, base_j
    cdef Py_ssize_t best
    cdef real best_val, v
    for bi in range(n):
        for ch in range(c):
            for i in range(oh):
                base_i = i * window
                for j in range(ow):
                    base_j = j * window
                    best = 0
                    best_val = x[bi, ch, base_i, base_j]
                    for wi in range(window):
                        for wj in range(window):
                            v = x[bi, ch, base_i + wi, base_j + wj]
                            if v > best_val:
                                best_val = v
                                best = wi * window + wj
                    out[bi, ch, i, j] = best_val
                    idx[bi, ch, i, j] = best
    return out_arr, idx_arr


def maxpool_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] idx,
                     Py_ssize_t h, Py_ssize_t w, int window):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t bi, ch, i, j, k
    for bi in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    k = idx[bi, ch, i, j]
                    dx[bi, ch, i * window + k // window, j * window + k % window] = \
                        dout[bi, ch, i, j]
    return out
