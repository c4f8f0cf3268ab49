"""Backend selection for the convolution hot kernels.

Two interchangeable implementations exist (identical math, possibly
different float summation order):

    numpy    window views + BLAS tensordot (always available)
    cython   compiled direct loops (built at install time)

Benchmarking (see benchmarks/bench_kernels.py) shows a clean split on this
workload: the compiled loops win decisively for depthwise convolutions and
large spatial kernels (no im2col blowup, no GEMM detour), while BLAS wins
for small-K standard convolutions, which are pure GEMMs.  The default
``auto`` backend dispatches on exactly that rule; it is deterministic, so
seeded runs stay reproducible.

``DERMO_KERNELS`` forces ``auto``, ``cython`` or ``numpy``; forcing an
unavailable backend is an error rather than a silent downgrade.

    conv2d_fwd(x, k, stride, pads) -> y
    conv2d_bwd(x, k, stride, pads, gy) -> (gx, gk)
    depthwise2d_fwd(x, k, stride, pads) -> y
    depthwise2d_bwd(x, k, stride, pads, gy) -> (gx, gk)
"""

from __future__ import annotations

import logging
import os

from . import numpy_backend

logger = logging.getLogger(__name__)

AVAILABLE = {"numpy": numpy_backend}
try:
    from . import _cy_kernels  # type: ignore[attr-defined]
    AVAILABLE["cython"] = _cy_kernels
except ImportError:  # pragma: no cover - build dependent
    _cy_kernels = None

# standard convs with K at or above this go to the compiled direct loops;
# smaller kernels are GEMM-shaped and stay on BLAS
_COMPILED_CONV_MIN_K = 5


class _AutoBackend:
    """Deterministic hybrid: compiled loops where they win, BLAS elsewhere."""

    NAME = "auto"

    def __init__(self, compiled, fallback):
        self._compiled = compiled
        self._fallback = fallback

    def _conv_impl(self, k):
        return self._compiled if k.shape[0] >= _COMPILED_CONV_MIN_K \
            else self._fallback

    def conv2d_fwd(self, x, k, stride, pads):
        return self._conv_impl(k).conv2d_fwd(x, k, stride, pads)

    def conv2d_bwd(self, x, k, stride, pads, gy):
        return self._conv_impl(k).conv2d_bwd(x, k, stride, pads, gy)

    def depthwise2d_fwd(self, x, k, stride, pads):
        return self._compiled.depthwise2d_fwd(x, k, stride, pads)

    def depthwise2d_bwd(self, x, k, stride, pads, gy):
        return self._compiled.depthwise2d_bwd(x, k, stride, pads, gy)


if "cython" in AVAILABLE:
    AVAILABLE["auto"] = _AutoBackend(AVAILABLE["cython"], numpy_backend)


def get_backend(name: str):
    """Return a backend by name; raises KeyError when not built."""
    try:
        return AVAILABLE[name]
    except KeyError:
        raise KeyError(f"kernel backend '{name}' is not available "
                       f"(have: {sorted(AVAILABLE)})") from None


def _select():
    forced = os.environ.get("DERMO_KERNELS")
    if forced:
        if forced not in AVAILABLE:
            raise ImportError(f"DERMO_KERNELS={forced!r} requested but that "
                              f"backend is unavailable (have: {sorted(AVAILABLE)})")
        return AVAILABLE[forced]
    if "auto" in AVAILABLE:
        return AVAILABLE["auto"]
    logger.debug("compiled kernels unavailable; using numpy fallback")
    return numpy_backend


_impl = _select()
BACKEND = _impl.NAME

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd = _impl.conv2d_bwd
depthwise2d_fwd = _impl.depthwise2d_fwd
depthwise2d_bwd = _impl.depthwise2d_bwd
