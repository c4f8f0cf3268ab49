"""Neural network layers over the autodiff core.

Layers are plain value objects holding parameter Tensors; calling a layer
runs its forward pass and registers backward rules on the active tape.
Convolution arithmetic follows the usual cross-correlation convention with
TF-style ``same`` / ``valid`` padding.  Image tensors are B x H x W x C.

Train-mode forward mutates state (batchnorm running statistics, dropout
RNG), so training is single-writer; eval-mode forward over frozen layers is
safe to run concurrently.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .rng import make_rng
from .tensor import Tensor, apply_op, he_normal_init, tmean


# -- padding arithmetic --------------------------------------------------------


def same_pads(h: int, w: int, k: int, stride: int):
    """TF-convention zero padding so that output dims are ceil(in / stride)."""
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    pad_h = max((out_h - 1) * stride + k - h, 0)
    pad_w = max((out_w - 1) * stride + k - w, 0)
    return pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2


def _resolve_pads(x_shape, k: int, stride: int, padding: str):
    _, h, w, _ = x_shape
    if padding == "same":
        return same_pads(h, w, k, stride)
    if padding == "valid":
        if h < k or w < k:
            raise ValueError(f"valid padding needs H,W >= {k}, got {h}x{w}")
        return (0, 0, 0, 0)
    raise ValueError(f"unknown padding mode {padding!r}")


def conv_output_hw(h: int, w: int, k: int, stride: int, padding: str):
    pt, pb, pl, pr = (same_pads(h, w, k, stride) if padding == "same"
                      else (0, 0, 0, 0))
    return (h + pt + pb - k) // stride + 1, (w + pl + pr - k) // stride + 1


# -- functional ops --------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "same") -> Tensor:
    """Cross-correlation with bias; kernel [K,K,Cin,N], x [B,H,W,Cin]."""
    if x.ndim != 4:
        raise ValueError(f"conv2d expects [B,H,W,C] input, got {x.shape}")
    k = kernel.shape[0]
    if x.shape[3] != kernel.shape[2]:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[3]}, "
                         f"kernel expects {kernel.shape[2]}")
    pads = _resolve_pads(x.shape, k, stride, padding)
    y = K.conv2d_fwd(x.data, kernel.data, stride, pads) + bias.data

    def bwd(gy):
        gx, gk = K.conv2d_bwd(x.data, kernel.data, stride, pads, gy)
        return gx, gk, gy.sum(axis=(0, 1, 2))

    return apply_op("conv2d", (x, kernel, bias), y, bwd)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1,
                     padding: str = "same") -> Tensor:
    """Per-channel spatial convolution; kernel [K,K,C] or [K,K,C,1]."""
    kshape = kernel.shape
    k = kshape[0]
    c = kshape[2]
    if x.shape[3] != c:
        raise ValueError(f"depthwise channel mismatch: {x.shape[3]} vs {c}")
    kdata = kernel.data.reshape(k, k, c)
    pads = _resolve_pads(x.shape, k, stride, padding)
    y = K.depthwise2d_fwd(x.data, kdata, stride, pads)

    def bwd(gy):
        gx, gk = K.depthwise2d_bwd(x.data, kdata, stride, pads, gy)
        return gx, gk.reshape(kshape)

    return apply_op("depthwise_conv2d", (x, kernel), y, bwd)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Max pooling with window == stride; gradient goes to the first maximum
    in row-major window order."""
    if window != stride:
        raise ValueError("maxpool2d supports window == stride only")
    b, h, w, c = x.shape
    if h % stride or w % stride:
        raise ValueError(f"maxpool2d: {h}x{w} not divisible by stride {stride}")
    ho, wo = h // stride, w // stride
    win = (x.data.reshape(b, ho, stride, wo, stride, c)
           .transpose(0, 1, 3, 2, 4, 5)
           .reshape(b, ho, wo, stride * stride, c))
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def bwd(gy):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[:, :, :, None, :],
                          gy[:, :, :, None, :], axis=3)
        gx = (gwin.reshape(b, ho, wo, stride, stride, c)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(b, h, w, c))
        return (gx,)

    return apply_op("maxpool2d", (x,), np.ascontiguousarray(y), bwd)


def upsample_nn(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling: each pixel becomes a factor x factor block."""
    if factor < 2 or int(factor) != factor:
        raise ValueError(f"upsample factor must be an integer >= 2, got {factor}")
    b, h, w, c = x.shape
    y = x.data.repeat(factor, axis=1).repeat(factor, axis=2)

    def bwd(gy):
        return (gy.reshape(b, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return apply_op("upsample_nn", (x,), y, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,H,W,C] -> [B,C] spatial mean."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects [B,H,W,C], got {x.shape}")
    return tmean(x, axes=(1, 2))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[B,in] @ [in,out] + [out]."""
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense: {x.shape} @ {weight.shape}")
    y = x.data @ weight.data + bias.data

    def bwd(gy):
        return gy @ weight.data.T, x.data.T @ gy, gy.sum(axis=0)

    return apply_op("dense", (x, weight, bias), y, bwd)


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """y = x * scale + shift with per-channel [C] scale/shift on the last axis."""
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ValueError(f"channel_affine: scale/shift must be [{c}]")
    red_axes = tuple(range(x.ndim - 1))
    y = x.data * scale.data + shift.data

    def bwd(gy):
        return (gy * scale.data,
                (gy * x.data).sum(axis=red_axes),
                gy.sum(axis=red_axes))

    return apply_op("channel_affine", (x, scale, shift), y, bwd)


def _batch_normalize(x: Tensor, eps: float):
    """Normalize per channel over (B,H,W); returns (xhat, mean, var)."""
    axes = (0, 1, 2)
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    m = x.data.shape[0] * x.data.shape[1] * x.data.shape[2]

    def bwd(gy):
        s1 = gy.sum(axis=axes)
        s2 = (gy * xhat).sum(axis=axes)
        gx = (invstd / m) * (m * gy - s1 - xhat * s2)
        return (gx,)

    return apply_op("batch_normalize", (x,), xhat, bwd), mu, var


def dropout(x: Tensor, rate: float, mode: str, rng) -> Tensor:
    """Inverted dropout: train mode zeroes units with probability ``rate`` and
    scales survivors by 1/(1-rate); eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    mask = Tensor(keep)

    def bwd(gy):
        return (gy * keep, None)

    return apply_op("dropout", (x, mask), x.data * keep, bwd)


# -- layer objects ----------------------------------------------------------------


class Conv2D:
    """Standard convolution: kernel [K,K,Cin,N] plus bias [N]."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: str = "same"):
        self.kernel = Tensor(
            np.zeros((kernel_size, kernel_size, in_channels, out_channels)),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.stride = stride
        self.padding = padding

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]

    @property
    def param_count(self) -> int:
        return self.kernel.size + self.bias.size

    def params(self):
        return [("kernel", self.kernel), ("bias", self.bias)]

    def init_params(self, rng) -> None:
        k, _, cin, _ = self.kernel.shape
        self.kernel.data[...] = he_normal_init(
            self.kernel.shape, fan_in=k * k * cin, rng_seed=rng).data
        self.bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class DepthwiseSeparableConv2D:
    """Depthwise [K,K,Cin,1] then pointwise [1,1,Cin,N] with bias [N].

    Parameter count excluding bias is K*K*Cin + Cin*N, i.e. a factor
    (1/N + 1/K^2) of the equivalent standard convolution.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: str = "same"):
        self.depthwise = Tensor(
            np.zeros((kernel_size, kernel_size, in_channels, 1)),
            requires_grad=True)
        self.pointwise = Tensor(
            np.zeros((1, 1, in_channels, out_channels)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.stride = stride
        self.padding = padding

    @property
    def kernel_size(self) -> int:
        return self.depthwise.shape[0]

    @property
    def param_count(self) -> int:
        return self.depthwise.size + self.pointwise.size + self.bias.size

    def params(self):
        return [("depthwise", self.depthwise), ("pointwise", self.pointwise),
                ("bias", self.bias)]

    def init_params(self, rng) -> None:
        k = self.kernel_size
        cin = self.depthwise.shape[2]
        self.depthwise.data[...] = he_normal_init(
            self.depthwise.shape, fan_in=k * k, rng_seed=rng).data
        self.pointwise.data[...] = he_normal_init(
            self.pointwise.shape, fan_in=cin, rng_seed=rng).data
        self.bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        y = depthwise_conv2d(x, self.depthwise, self.stride, self.padding)
        return conv2d(y, self.pointwise, self.bias, stride=1, padding="valid")


class BatchNorm2D:
    """Per-channel batch normalization over (B,H,W).

    Train mode uses batch statistics and updates the running ones with
    momentum; eval mode applies the running statistics (mean 0 / var 1
    before any update -- documented, not an error).
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("batchnorm epsilon must be > 0")
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels))
        self.running_var = Tensor(np.ones(channels))
        self.momentum = momentum
        self.eps = eps
        self.mode = "eval"

    @property
    def param_count(self) -> int:
        return self.gamma.size + self.beta.size

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]

    def init_params(self, rng) -> None:
        self.gamma.data[...] = 1.0
        self.beta.data[...] = 0.0
        self.running_mean.data[...] = 0.0
        self.running_var.data[...] = 1.0

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.gamma.size:
            raise ValueError(f"batchnorm channel mismatch: {x.shape[-1]} "
                             f"vs {self.gamma.size}")
        if self.mode == "train":
            xhat, mu, var = _batch_normalize(x, self.eps)
            m = self.momentum
            self.running_mean.data[...] = m * self.running_mean.data + (1 - m) * mu
            self.running_var.data[...] = m * self.running_var.data + (1 - m) * var
            return channel_affine(xhat, self.gamma, self.beta)
        invstd = 1.0 / np.sqrt(self.running_var.data + self.eps)
        xhat = channel_affine(x, Tensor(invstd),
                              Tensor(-self.running_mean.data * invstd))
        return channel_affine(xhat, self.gamma, self.beta)


class Dropout:
    def __init__(self, rate: float, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.mode = "eval"
        self.rng = make_rng(0) if rng is None else rng

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.mode, self.rng)


class Dense:
    def __init__(self, in_features: int, out_features: int):
        self.weight = Tensor(np.zeros((in_features, out_features)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def init_params(self, rng) -> None:
        self.weight.data[...] = he_normal_init(
            self.weight.shape, fan_in=self.weight.shape[0], rng_seed=rng).data
        self.bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)
