"""Vectorized numpy implementations of the convolution hot kernels.

This is the fallback backend: standard convolution runs as window-view +
BLAS tensordot (im2col under the hood), depthwise convolution as a K*K sum
of strided slices.  All arrays are contiguous float64 in B x H x W x C
layout; ``pads`` is (top, bottom, left, right) zero padding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _pad(x: np.ndarray, pads) -> np.ndarray:
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def _out_hw(h, w, k, stride, pads):
    pt, pb, pl, pr = pads
    return (h + pt + pb - k) // stride + 1, (w + pl + pr - k) // stride + 1


def conv2d_fwd(x: np.ndarray, k: np.ndarray, stride: int, pads) -> np.ndarray:
    """x [B,H,W,Cin], k [K,K,Cin,N] -> [B,Ho,Wo,N] (cross-correlation)."""
    K = k.shape[0]
    xp = _pad(x, pads)
    # windows: [B, Ho, Wo, Cin, K, K]
    w = sliding_window_view(xp, (K, K), axis=(1, 2))[:, ::stride, ::stride]
    return np.ascontiguousarray(
        np.tensordot(w, k, axes=([4, 5, 3], [0, 1, 2])))


def conv2d_bwd(x: np.ndarray, k: np.ndarray, stride: int, pads,
               gy: np.ndarray):
    """Gradients (gx, gk) for conv2d_fwd."""
    K = k.shape[0]
    B, H, W, _ = x.shape
    pt, pb, pl, pr = pads
    Ho, Wo = gy.shape[1], gy.shape[2]

    xp = _pad(x, pads)
    w = sliding_window_view(xp, (K, K), axis=(1, 2))[:, ::stride, ::stride]
    # [Cin,K,K,N] -> [K,K,Cin,N]
    gk = np.tensordot(w, gy, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)

    # scatter gy @ k back onto the padded input (col2im)
    gcols = np.tensordot(gy, k, axes=([3], [3]))  # [B,Ho,Wo,K,K,Cin]
    gxp = np.zeros_like(xp)
    for kh in range(K):
        hs = slice(kh, kh + stride * Ho, stride)
        for kw in range(K):
            ws = slice(kw, kw + stride * Wo, stride)
            gxp[:, hs, ws, :] += gcols[:, :, :, kh, kw, :]
    gx = gxp[:, pt:pt + H, pl:pl + W, :]
    return np.ascontiguousarray(gx), np.ascontiguousarray(gk)


def depthwise2d_fwd(x: np.ndarray, k: np.ndarray, stride: int, pads) -> np.ndarray:
    """x [B,H,W,C], k [K,K,C] -> [B,Ho,Wo,C]: per-channel spatial conv."""
    K = k.shape[0]
    xp = _pad(x, pads)
    Ho, Wo = _out_hw(x.shape[1], x.shape[2], K, stride, pads)
    y = np.zeros((x.shape[0], Ho, Wo, x.shape[3]))
    for kh in range(K):
        hs = slice(kh, kh + stride * Ho, stride)
        for kw in range(K):
            ws = slice(kw, kw + stride * Wo, stride)
            y += xp[:, hs, ws, :] * k[kh, kw]
    return y


def depthwise2d_bwd(x: np.ndarray, k: np.ndarray, stride: int, pads,
                    gy: np.ndarray):
    """Gradients (gx, gk) for depthwise2d_fwd."""
    K = k.shape[0]
    B, H, W, C = x.shape
    pt, pb, pl, pr = pads
    Ho, Wo = gy.shape[1], gy.shape[2]

    xp = _pad(x, pads)
    gxp = np.zeros_like(xp)
    gk = np.empty_like(k)
    for kh in range(K):
        hs = slice(kh, kh + stride * Ho, stride)
        for kw in range(K):
            ws = slice(kw, kw + stride * Wo, stride)
            patch = xp[:, hs, ws, :]
            gk[kh, kw] = (patch * gy).sum(axis=(0, 1, 2))
            gxp[:, hs, ws, :] += gy * k[kh, kw]
    gx = gxp[:, pt:pt + H, pl:pl + W, :]
    return np.ascontiguousarray(gx), gk
