"""Dense float64 tensors with reverse-mode automatic differentiation.

The design is a classic Wengert list: a module-level :class:`Tape` records
every differentiable operation in execution order, and :func:`backward`
replays the list in reverse, accumulating gradients into every tensor that
``requires_grad``.  Data lives in contiguous numpy float64 arrays with the
canonical image layout ``B x H x W x C``; broadcasting is deliberately
limited to scalar-vs-tensor.

Any NaN or Inf produced by a forward or backward step raises
:class:`NumericsError` immediately -- silent numeric corruption is treated
as a bug, not a value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import make_rng

__all__ = [
    "Tensor", "Tape", "NumericsError", "no_grad", "apply_op", "backward",
    "zeros", "ones", "full", "tensor_from", "he_normal_init",
    "add", "sub", "mul", "div", "exp", "log", "clip", "relu", "sigmoid",
    "matmul", "tsum", "tmean", "concat_channels", "softmax_rows",
    "grad_check", "GradCheckReport",
]


class NumericsError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class Tensor:
    """A dense float64 array, optionally participating in the active tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:  # 0-d stays 0-d (ascontiguousarray would promote it)
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axes=None): return tsum(self, axes)
    def mean(self, axes=None): return tmean(self, axes)
    def backward(self) -> None: backward(self)


# -- the tape ----------------------------------------------------------------


@dataclass
class _TapeEntry:
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    name: str


class Tape:
    """Ordered record of differentiable ops; backward replays it reversed.

    Recording order is a topological order because execution is eager and
    single-threaded: an op's inputs always exist before the op runs.
    """

    def __init__(self):
        self.entries: list[_TapeEntry] = []

    def record(self, inputs, output, backward_fn, name: str) -> None:
        self.entries.append(_TapeEntry(tuple(inputs), output, backward_fn, name))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()


_TAPE_STACK: list[Tape] = [Tape()]
_GRAD_ENABLED: list[bool] = [True]


def active_tape() -> Tape:
    return _TAPE_STACK[-1]


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced by '{op}'")


def apply_op(name, inputs, out_data, backward_fn) -> Tensor:
    """Wrap an op result in a Tensor, recording it when gradients are live.

    ``backward_fn(out_grad)`` must return one gradient array (or None) per
    input, aligned positionally.  This is the extension hook used by the
    layer kernels (convolution, pooling, normalization, ...).
    """
    _check_finite(out_data, name)
    track = _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        active_tape().record(inputs, out, backward_fn, name)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor.

    Repeated calls without clearing grads keep accumulating, which is the
    documented contract (gradient accumulation across micro-batches).
    """
    if loss.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {loss.shape}")
    tape = active_tape()
    if not tape.entries:
        raise ValueError("backward on an empty tape")
    if not loss.requires_grad:
        raise ValueError("backward root does not require grad (no recorded path)")

    # Scratch gradients for this pass only; persisted grads accumulate below.
    store: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(tape.entries):
        gy = store.get(id(entry.output))
        if gy is None:
            continue
        grads = entry.backward_fn(gy)
        for t, g in zip(entry.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            _check_finite(g, f"{entry.name}.backward")
            tid = id(t)
            if tid in store:
                store[tid] = store[tid] + g
            else:
                store[tid] = g
                tensors[tid] = t
    for tid, g in store.items():
        t = tensors[tid]
        t.grad = g if t.grad is None else t.grad + g


# -- constructors --------------------------------------------------------------


def _validated_shape(shape) -> tuple:
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ValueError(f"all dimensions must be >= 1, got {dims}")
    return dims


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_validated_shape(shape)), requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(_validated_shape(shape)), requires_grad)


def full(shape, value, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(_validated_shape(shape), float(value)), requires_grad)


def tensor_from(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def he_normal_init(shape, fan_in: int, rng_seed) -> Tensor:
    """Zero-mean Gaussian with std sqrt(2 / fan_in), deterministic per seed."""
    dims = _validated_shape(shape)
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    rng = make_rng(rng_seed)
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=dims))


# -- elementwise ops -----------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{op}: shapes {a.shape} and {b.shape} differ and neither "
                     "is a scalar (only scalar broadcasting is supported)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Undo scalar broadcasting: a scalar operand absorbs the full sum.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")

    def bwd(gy):
        return _reduce_to(gy, a.shape), _reduce_to(gy, b.shape)

    return apply_op("add", (a, b), a.data + b.data, bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")

    def bwd(gy):
        return _reduce_to(gy, a.shape), _reduce_to(-gy, b.shape)

    return apply_op("sub", (a, b), a.data - b.data, bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")

    def bwd(gy):
        return _reduce_to(gy * b.data, a.shape), _reduce_to(gy * a.data, b.shape)

    return apply_op("mul", (a, b), a.data * b.data, bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: denominator contains zero")

    def bwd(gy):
        ga = _reduce_to(gy / b.data, a.shape)
        gb = _reduce_to(-gy * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return apply_op("div", (a, b), a.data / b.data, bwd)


def exp(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    with np.errstate(over="ignore"):  # overflow surfaces as NumericsError below
        out = np.exp(t.data)

    def bwd(gy):
        return (gy * out,)

    return apply_op("exp", (t,), out, bwd)


def log(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    if np.any(t.data <= 0.0):
        raise NumericsError("log: non-positive input (clip first)")

    def bwd(gy):
        return (gy / t.data,)

    return apply_op("log", (t,), np.log(t.data), bwd)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    t = _as_tensor(t)
    if not lo < hi:
        raise ValueError(f"clip: need lo < hi, got [{lo}, {hi}]")
    out = np.clip(t.data, lo, hi)

    def bwd(gy):
        inside = (t.data >= lo) & (t.data <= hi)
        return (gy * inside,)

    return apply_op("clip", (t,), out, bwd)


def relu(t: Tensor) -> Tensor:
    t = _as_tensor(t)

    def bwd(gy):
        return (gy * (t.data > 0.0),)

    return apply_op("relu", (t,), np.maximum(t.data, 0.0), bwd)


def sigmoid(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(gy):
        return (gy * out * (1.0 - out),)

    return apply_op("sigmoid", (t,), out, bwd)


# -- linear algebra and reductions ----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def bwd(gy):
        return gy @ b.data.T, a.data.T @ gy

    return apply_op("matmul", (a, b), a.data @ b.data, bwd)


def _norm_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def tsum(t: Tensor, axes=None) -> Tensor:
    t = _as_tensor(t)
    ax = _norm_axes(axes, t.ndim)
    out = t.data.sum(axis=ax)

    def bwd(gy):
        g = gy
        for a in sorted(ax):
            g = np.expand_dims(g, a)
        return (np.broadcast_to(g, t.shape).copy(),)

    return apply_op("sum", (t,), out, bwd)


def tmean(t: Tensor, axes=None) -> Tensor:
    t = _as_tensor(t)
    ax = _norm_axes(axes, t.ndim)
    count = 1
    for a in ax:
        count *= t.shape[a]
    out = t.data.mean(axis=ax)

    def bwd(gy):
        g = gy / count
        for a in sorted(ax):
            g = np.expand_dims(g, a)
        return (np.broadcast_to(g, t.shape).copy(),)

    return apply_op("mean", (t,), out, bwd)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the trailing (channel) axis; inputs must agree on
    every other dimension."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat_channels: empty input list")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead or t.ndim != ts[0].ndim:
            raise ValueError("concat_channels: spatial/batch dimensions differ: "
                             f"{[t.shape for t in ts]}")
    if len(ts) == 1:
        t = ts[0]

        def bwd_one(gy):
            return (gy,)

        return apply_op("concat_channels", (t,), t.data.copy(), bwd_one)

    widths = [t.shape[-1] for t in ts]
    offsets = np.cumsum([0] + widths)

    def bwd(gy):
        return tuple(gy[..., offsets[i]:offsets[i + 1]].copy()
                     for i in range(len(ts)))

    return apply_op("concat_channels", tuple(ts),
                    np.concatenate([t.data for t in ts], axis=-1), bwd)


def softmax_rows(t: Tensor) -> Tensor:
    """Row-wise stable softmax for a 2-D tensor of logits."""
    t = _as_tensor(t)
    if t.ndim != 2:
        raise ValueError(f"softmax_rows expects [B, C], got {t.shape}")
    z = t.data - t.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(gy):
        dot = (gy * p).sum(axis=1, keepdims=True)
        return (p * (gy - dot),)

    return apply_op("softmax_rows", (t,), p, bwd)


# -- gradient verification -------------------------------------------------------


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    checked: int
    worst_index: Optional[tuple]
    tol: float

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"grad_check {state}: max_rel_error={self.max_rel_error:.3e} "
                f"(tol={self.tol:.1e}, {self.checked} entries)")


def _rel_err(a: float, n: float, floor: float = 1e-8) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(f, x: Tensor, step: float = 1e-5, tol: float = 1e-4,
               max_entries: Optional[int] = None, rng=None) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` must be deterministic (verified with two forward passes) and return
    a scalar Tensor.  ``max_entries`` caps the number of coordinates checked;
    entries are then chosen by the provided seeded rng.  Relative error uses
    a 1e-8 denominator floor.
    """
    with no_grad():
        y0 = f(x)
        y1 = f(x)
    if not isinstance(y0, Tensor) or y0.size != 1:
        raise ValueError("grad_check: f must return a scalar Tensor")
    if not np.array_equal(y0.data, y1.data):
        raise ValueError("grad_check: f is not deterministic "
                         "(two forward passes differ); disable stochastic "
                         "layers such as train-mode dropout first")

    saved_grad = x.grad
    saved_rg = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape():
            y = f(x)
            if y.requires_grad:
                backward(y)
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    finally:
        x.grad = saved_grad
        x.requires_grad = saved_rg

    indices = list(np.ndindex(*x.shape)) if x.ndim else [()]
    if max_entries is not None and len(indices) > max_entries:
        gen = make_rng(0 if rng is None else rng)
        picks = gen.choice(len(indices), size=max_entries, replace=False)
        indices = [indices[i] for i in picks]

    max_err = 0.0
    worst = None
    with no_grad():
        for idx in indices:
            orig = x.data[idx]
            x.data[idx] = orig + step
            f_plus = f(x).item()
            x.data[idx] = orig - step
            f_minus = f(x).item()
            x.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = _rel_err(float(analytic[idx]), numeric)
            if err > max_err:
                max_err, worst = err, idx
    return GradCheckReport(passed=max_err < tol, max_rel_error=max_err,
                           checked=len(indices), worst_index=worst, tol=tol)
