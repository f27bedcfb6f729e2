# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter kernels.

Same contracts as the numpy fallback; col2im accumulates contributions per
cell in ascending (kh, kw) order so both backends agree bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def out_extent(int n, int k, int stride, int pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(cnp.ndarray[cnp.float64_t, ndim=4] x, int k, int stride, int pad):
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = (h + 2 * pad - k) // stride + 1
    cdef int ow = (w + 2 * pad - k) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=6] cols = np.zeros((b, oh, ow, c, k, k))
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x)
    cdef double[:, :, :, :, :, ::1] cv = cols
    cdef int bi, ci, i, j, kh, kw, ih, iw, j0, j1
    # (b, i) outer keeps the written patch row cache-resident across channels
    for bi in range(b):
        for i in range(oh):
            for ci in range(c):
                for kh in range(k):
                    ih = stride * i + kh - pad
                    if ih < 0 or ih >= h:
                        continue
                    for kw in range(k):
                        # j range with in-bounds iw = stride*j + kw - pad
                        j0 = 0
                        if kw < pad:
                            j0 = (pad - kw + stride - 1) // stride
                        j1 = (w - 1 - kw + pad) // stride
                        if j1 >= ow:
                            j1 = ow - 1
                        for j in range(j0, j1 + 1):
                            iw = stride * j + kw - pad
                            cv[bi, i, j, ci, kh, kw] = xv[bi, ci, ih, iw]
    return cols


def col2im(cnp.ndarray[cnp.float64_t, ndim=6] cols, int h, int w, int stride, int pad):
    cdef int b = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef int c = cols.shape[3], k = cols.shape[4]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((b, c, h, w))
    cdef double[:, :, :, :, :, ::1] cv = np.ascontiguousarray(cols)
    cdef double[:, :, :, ::1] ov = out
    cdef int bi, ci, i, j, kh, kw, ih, iw, j0, j1
    # ascending (i, j) with descending (kh, kw) gives each output cell its
    # contributions in descending kernel-offset order, matching the numpy
    # fallback's plane order bit for bit.
    for bi in range(b):
        for ci in range(c):
            for i in range(oh):
                for kh in range(k - 1, -1, -1):
                    ih = stride * i + kh - pad
                    if ih < 0 or ih >= h:
                        continue
                    for kw in range(k - 1, -1, -1):
                        j0 = 0
                        if kw < pad:
                            j0 = (pad - kw + stride - 1) // stride
                        j1 = (w - 1 - kw + pad) // stride
                        if j1 >= ow:
                            j1 = ow - 1
                        for j in range(j0, j1 + 1):
                            iw = stride * j + kw - pad
                            ov[bi, ci, ih, iw] += cv[bi, i, j, ci, kh, kw]
    return out
