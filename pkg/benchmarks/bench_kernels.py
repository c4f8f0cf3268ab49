#!/usr/bin/env python3
"""Benchmark the convolution hot kernels: compiled backend vs numpy fallback.

Shapes mirror the layers of the default (toy) network at batch 4.  For each
case the script reports per-call time, GFLOP/s, the compiled/numpy speedup,
and the maximum forward discrepancy between the two backends.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--batch B]
"""

import argparse
import time

import numpy as np

from dermoscan import kernels

# (label, H, W, Cin, K, N, stride) - standard convs from the toy network
CONV_CASES = [
    ("stem 7x7/2",      192, 256, 3,   7, 8,   2),
    ("stage2 3x3",       48, 64,  16,  3, 16,  1),
    ("stage3 3x3",       24, 32,  32,  3, 32,  1),
    ("stage4 3x3",       12, 16,  64,  3, 64,  1),
    ("stage5 3x3",        6, 8,   128, 3, 128, 1),
    ("proj 1x1/2",       48, 64,  16,  1, 32,  2),
]

# (label, H, W, C, K, stride) - depthwise stages
DW_CASES = [
    ("entry dw 3x3/2",  192, 256, 3,  3, 2),
    ("middle dw 3x3",    12, 16,  64, 3, 1),
    ("decoder dw 3x3",   96, 128, 16, 3, 1),
]


def best_of(fn, repeats):
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def conv_flops(b, h, w, cin, k, n, stride):
    ho = -(-h // stride)
    wo = -(-w // stride)
    return 2.0 * b * ho * wo * k * k * cin * n


def dw_flops(b, h, w, c, k, stride):
    ho = -(-h // stride)
    wo = -(-w // stride)
    return 2.0 * b * ho * wo * k * k * c


def run(batch, repeats):
    if "cython" not in kernels.AVAILABLE:
        print("compiled backend not built; nothing to compare")
        return
    fast = kernels.get_backend("cython")
    ref = kernels.get_backend("numpy")
    rng = np.random.default_rng(0)

    header = (f"{'case':<18}{'dir':<5}{'numpy ms':>10}{'cython ms':>11}"
              f"{'speedup':>9}{'GF/s cy':>9}{'max|d|':>10}")
    print(f"batch={batch}, repeats={repeats} (best-of)")
    print(header)
    print("-" * len(header))

    def row(label, direction, t_ref, t_fast, flops, delta):
        print(f"{label:<18}{direction:<5}{t_ref * 1e3:>10.2f}"
              f"{t_fast * 1e3:>11.2f}{t_ref / t_fast:>9.2f}"
              f"{flops / t_fast / 1e9:>9.2f}{delta:>10.1e}")

    for label, h, w, cin, k, n, stride in CONV_CASES:
        pads = _same(h, w, k, stride)
        x = rng.normal(size=(batch, h, w, cin))
        kern = rng.normal(size=(k, k, cin, n))
        y_ref = ref.conv2d_fwd(x, kern, stride, pads)
        y_fast = fast.conv2d_fwd(x, kern, stride, pads)
        delta = np.abs(y_ref - y_fast).max()
        t_ref = best_of(lambda: ref.conv2d_fwd(x, kern, stride, pads), repeats)
        t_fast = best_of(lambda: fast.conv2d_fwd(x, kern, stride, pads), repeats)
        row(label, "fwd", t_ref, t_fast,
            conv_flops(batch, h, w, cin, k, n, stride), delta)

        gy = rng.normal(size=y_ref.shape)
        t_ref = best_of(lambda: ref.conv2d_bwd(x, kern, stride, pads, gy), repeats)
        t_fast = best_of(lambda: fast.conv2d_bwd(x, kern, stride, pads, gy), repeats)
        row(label, "bwd", t_ref, t_fast,
            3 * conv_flops(batch, h, w, cin, k, n, stride), 0.0)

    for label, h, w, c, k, stride in DW_CASES:
        pads = _same(h, w, k, stride)
        x = rng.normal(size=(batch, h, w, c))
        kern = rng.normal(size=(k, k, c))
        y_ref = ref.depthwise2d_fwd(x, kern, stride, pads)
        y_fast = fast.depthwise2d_fwd(x, kern, stride, pads)
        delta = np.abs(y_ref - y_fast).max()
        t_ref = best_of(lambda: ref.depthwise2d_fwd(x, kern, stride, pads), repeats)
        t_fast = best_of(lambda: fast.depthwise2d_fwd(x, kern, stride, pads), repeats)
        row(label, "fwd", t_ref, t_fast,
            dw_flops(batch, h, w, c, k, stride), delta)

        gy = rng.normal(size=y_ref.shape)
        t_ref = best_of(lambda: ref.depthwise2d_bwd(x, kern, stride, pads, gy),
                        repeats)
        t_fast = best_of(lambda: fast.depthwise2d_bwd(x, kern, stride, pads, gy),
                         repeats)
        row(label, "bwd", t_ref, t_fast,
            3 * dw_flops(batch, h, w, c, k, stride), 0.0)


def _same(h, w, k, stride):
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    ph = max((out_h - 1) * stride + k - h, 0)
    pw = max((out_w - 1) * stride + k - w, 0)
    return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--batch", type=int, default=4)
    args = ap.parse_args()
    run(args.batch, args.repeats)
