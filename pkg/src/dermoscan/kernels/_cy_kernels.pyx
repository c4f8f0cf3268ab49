# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled convolution hot kernels.

Same contracts as numpy_backend.  Parallel loops are arranged so every
output element is accumulated by exactly one thread in a fixed nested-loop
order, which keeps results bit-identical to the serial path regardless of
thread count: forward/depthwise parallelize over output rows, input
gradients are computed as gathers over input rows, and kernel gradients
parallelize over kernel taps.
"""

import numpy as np

from cython.parallel cimport prange


NAME = "cython"


def conv2d_fwd(x, k, int stride, pads):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef Py_ssize_t pt = pads[0], pb = pads[1], pl = pads[2], pr = pads[3]
    cdef Py_ssize_t B = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3]
    cdef Py_ssize_t K = kv.shape[0], N = kv.shape[3]
    cdef Py_ssize_t Ho = (H + pt + pb - K) // stride + 1
    cdef Py_ssize_t Wo = (W + pl + pr - K) // stride + 1
    y_arr = np.zeros((B, Ho, Wo, N))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t bh, b, oh, ow, kh, kw, c, n, ih, iw
    cdef double val
    for bh in prange(B * Ho, nogil=True, schedule='static'):
        b = bh // Ho
        oh = bh % Ho
        for kh in range(K):
            ih = oh * stride + kh - pt
            if ih < 0 or ih >= H:
                continue
            for ow in range(Wo):
                for kw in range(K):
                    iw = ow * stride + kw - pl
                    if iw < 0 or iw >= W:
                        continue
                    for c in range(C):
                        val = xv[b, ih, iw, c]
                        for n in range(N):
                            y[b, oh, ow, n] += val * kv[kh, kw, c, n]
    return y_arr


def conv2d_bwd(x, k, int stride, pads, gy):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t pt = pads[0], pl = pads[2]
    cdef Py_ssize_t B = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3]
    cdef Py_ssize_t K = kv.shape[0], N = kv.shape[3]
    cdef Py_ssize_t Ho = gv.shape[1], Wo = gv.shape[2]
    gx_arr = np.zeros((B, H, W, C))
    gk_arr = np.zeros((K, K, C, N))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    cdef Py_ssize_t bh, kk, b, oh, ow, kh, kw, c, n, ih, iw, t, u
    cdef double acc, val

    # input gradient: gather over input rows (race-free, deterministic)
    for bh in prange(B * H, nogil=True, schedule='static'):
        b = bh // H
        ih = bh % H
        for kh in range(K):
            t = ih + pt - kh
            if t < 0 or t % stride != 0:
                continue
            oh = t // stride
            if oh >= Ho:
                continue
            for iw in range(W):
                for kw in range(K):
                    u = iw + pl - kw
                    if u < 0 or u % stride != 0:
                        continue
                    ow = u // stride
                    if ow >= Wo:
                        continue
                    for c in range(C):
                        acc = 0.0
                        for n in range(N):
                            acc = acc + gv[b, oh, ow, n] * kv[kh, kw, c, n]
                        gx[b, ih, iw, c] += acc

    # kernel gradient: each thread owns one kernel tap
    for kk in prange(K * K, nogil=True, schedule='static'):
        kh = kk // K
        kw = kk % K
        for b in range(B):
            for oh in range(Ho):
                ih = oh * stride + kh - pt
                if ih < 0 or ih >= H:
                    continue
                for ow in range(Wo):
                    iw = ow * stride + kw - pl
                    if iw < 0 or iw >= W:
                        continue
                    for c in range(C):
                        val = xv[b, ih, iw, c]
                        for n in range(N):
                            gk[kh, kw, c, n] += val * gv[b, oh, ow, n]
    return gx_arr, gk_arr


def depthwise2d_fwd(x, k, int stride, pads):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef Py_ssize_t pt = pads[0], pb = pads[1], pl = pads[2], pr = pads[3]
    cdef Py_ssize_t B = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3]
    cdef Py_ssize_t K = kv.shape[0]
    cdef Py_ssize_t Ho = (H + pt + pb - K) // stride + 1
    cdef Py_ssize_t Wo = (W + pl + pr - K) // stride + 1
    y_arr = np.zeros((B, Ho, Wo, C))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t bh, b, oh, ow, kh, kw, c, ih, iw
    for bh in prange(B * Ho, nogil=True, schedule='static'):
        b = bh // Ho
        oh = bh % Ho
        for kh in range(K):
            ih = oh * stride + kh - pt
            if ih < 0 or ih >= H:
                continue
            for ow in range(Wo):
                for kw in range(K):
                    iw = ow * stride + kw - pl
                    if iw < 0 or iw >= W:
                        continue
                    for c in range(C):
                        y[b, oh, ow, c] += xv[b, ih, iw, c] * kv[kh, kw, c]
    return y_arr


def depthwise2d_bwd(x, k, int stride, pads, gy):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t pt = pads[0], pl = pads[2]
    cdef Py_ssize_t B = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3]
    cdef Py_ssize_t K = kv.shape[0]
    cdef Py_ssize_t Ho = gv.shape[1], Wo = gv.shape[2]
    gx_arr = np.zeros((B, H, W, C))
    gk_arr = np.zeros((K, K, C))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef Py_ssize_t bh, kk, b, oh, ow, kh, kw, c, ih, iw, t, u

    for bh in prange(B * H, nogil=True, schedule='static'):
        b = bh // H
        ih = bh % H
        for kh in range(K):
            t = ih + pt - kh
            if t < 0 or t % stride != 0:
                continue
            oh = t // stride
            if oh >= Ho:
                continue
            for iw in range(W):
                for kw in range(K):
                    u = iw + pl - kw
                    if u < 0 or u % stride != 0:
                        continue
                    ow = u // stride
                    if ow >= Wo:
                        continue
                    for c in range(C):
                        gx[b, ih, iw, c] += gv[b, oh, ow, c] * kv[kh, kw, c]

    for kk in prange(K * K, nogil=True, schedule='static'):
        kh = kk // K
        kw = kk % K
        for b in range(B):
            for oh in range(Ho):
                ih = oh * stride + kh - pt
                if ih < 0 or ih >= H:
                    continue
                for ow in range(Wo):
                    iw = ow * stride + kw - pl
                    if iw < 0 or iw >= W:
                        continue
                    for c in range(C):
                        gk[kh, kw, c] += xv[b, ih, iw, c] * gv[b, oh, ow, c]
    return gx_arr, gk_arr
