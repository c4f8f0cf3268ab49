"""The dual-encoder detection + recognition network.

One trunk, two encoders over the same input: a residual encoder (stacked
projection/identity blocks) and a lightweight depthwise-separable encoder
(entry / middle / exit flows).  Their deepest maps are fused channel-wise;
the fused map drives a decoder that concatenates the matching stage of BOTH
encoders at every upsampling step and emits full-resolution mask logits.
Three classification heads (one per encoder top, one on the fused map) are
averaged into the class probability vector.

Every stage halves resolution, so both configured input resolutions must be
divisible by 32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .layers import (
    BatchNorm2D, Conv2D, Dense, DepthwiseSeparableConv2D, Dropout,
    global_avg_pool, maxpool2d, upsample_nn,
)
from .rng import make_rng
from .tensor import Tensor, concat_channels, relu, sigmoid, softmax_rows

CLASS_NAMES = {2: ("Nev", "Mel"), 3: ("Nev", "SK", "Mel")}


@dataclass
class NetworkConfig:
    """Widths, depths and input resolutions; defaults are the desk-scale toy."""

    input_hw_detection: tuple = (192, 256)
    input_hw_recognition: tuple = (192, 192)
    stage_channels: tuple = (8, 16, 32, 64, 128)
    encoder1_stage_repeats: tuple = (1, 2, 2, 2)
    encoder2_middle_repeats: int = 2
    num_classes: int = 2
    dropout_rate: float = 0.5
    fcl_width: int = 64
    include_decoder: bool = True

    def __post_init__(self):
        self.input_hw_detection = tuple(int(v) for v in self.input_hw_detection)
        self.input_hw_recognition = tuple(int(v) for v in self.input_hw_recognition)
        self.stage_channels = tuple(int(v) for v in self.stage_channels)
        self.encoder1_stage_repeats = tuple(int(v) for v in self.encoder1_stage_repeats)
        for hw in (self.input_hw_detection, self.input_hw_recognition):
            if len(hw) != 2 or any(v % 32 != 0 or v <= 0 for v in hw):
                raise ValueError(f"input resolution {hw} must be positive and "
                                 "divisible by 32 (five halvings)")
        if len(self.stage_channels) != 5 or any(c < 1 for c in self.stage_channels):
            raise ValueError("stage_channels needs 5 positive entries")
        if len(self.encoder1_stage_repeats) != 4 or any(
                r < 0 for r in self.encoder1_stage_repeats):
            raise ValueError("encoder1_stage_repeats needs 4 non-negative entries")
        if self.encoder2_middle_repeats < 0:
            raise ValueError("encoder2_middle_repeats must be >= 0")
        if self.num_classes not in (2, 3):
            raise ValueError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.fcl_width < 1:
            raise ValueError("fcl_width must be >= 1")

    @classmethod
    def full_scale(cls, num_classes: int = 3) -> "NetworkConfig":
        """Widths in the spirit of the reference residual/separable encoders.
        GPU-scale; not exercised by the test suite."""
        return cls(stage_channels=(64, 256, 512, 1024, 2048),
                   encoder1_stage_repeats=(2, 3, 5, 2),
                   encoder2_middle_repeats=8,
                   fcl_width=256,
                   num_classes=num_classes)

    @property
    def class_names(self) -> tuple:
        return CLASS_NAMES[self.num_classes]

    # stable key=value serialization (embedded in the weight file)

    def to_config_lines(self) -> str:
        def fmt(v):
            if isinstance(v, tuple):
                return ",".join(str(i) for i in v)
            if isinstance(v, bool):
                return "1" if v else "0"
            return repr(v) if isinstance(v, float) else str(v)

        keys = ["input_hw_detection", "input_hw_recognition", "stage_channels",
                "encoder1_stage_repeats", "encoder2_middle_repeats",
                "num_classes", "dropout_rate", "fcl_width", "include_decoder"]
        return "\n".join(f"{k}={fmt(getattr(self, k))}" for k in keys) + "\n"

    @classmethod
    def from_config_lines(cls, text: str) -> "NetworkConfig":
        kv = {}
        for line in text.strip().splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        try:
            return cls(
                input_hw_detection=tuple(int(v) for v in kv["input_hw_detection"].split(",")),
                input_hw_recognition=tuple(int(v) for v in kv["input_hw_recognition"].split(",")),
                stage_channels=tuple(int(v) for v in kv["stage_channels"].split(",")),
                encoder1_stage_repeats=tuple(int(v) for v in kv["encoder1_stage_repeats"].split(",")),
                encoder2_middle_repeats=int(kv["encoder2_middle_repeats"]),
                num_classes=int(kv["num_classes"]),
                dropout_rate=float(kv["dropout_rate"]),
                fcl_width=int(kv["fcl_width"]),
                include_decoder=kv["include_decoder"] == "1",
            )
        except KeyError as exc:
            raise ValueError(f"config blob is missing key {exc}") from None


@dataclass
class EncoderOutputs:
    """Per-stage feature maps; stage n lives at 1/2**n of the input."""

    stages: list  # five Tensors

    def __getitem__(self, n: int) -> Tensor:
        if not 1 <= n <= 5:
            raise IndexError(f"stage index must be 1..5, got {n}")
        return self.stages[n - 1]

    @property
    def top(self) -> Tensor:
        return self.stages[-1]


# -- building blocks ---------------------------------------------------------


_LEAF_TYPES = (Conv2D, DepthwiseSeparableConv2D, BatchNorm2D, Dense, Dropout)


class Block:
    """Composite of layers/blocks; children are discovered in declaration
    order for deterministic parameter walks."""

    def children(self) -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, _LEAF_TYPES + (Block,)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, _LEAF_TYPES + (Block,)):
                        yield f"{name}{i}", item


def iter_layers(prefix: str, obj) -> Iterator[tuple]:
    if isinstance(obj, _LEAF_TYPES):
        yield prefix, obj
        return
    for name, child in obj.children():
        yield from iter_layers(f"{prefix}.{name}" if prefix else name, child)


class ResidualConvBlock(Block):
    """Two 3x3 convolutions with a strided 1x1 projection shortcut."""

    def __init__(self, cin: int, cout: int, stride: int):
        self.conv1 = Conv2D(cin, cout, 3, stride=stride)
        self.bn1 = BatchNorm2D(cout)
        self.conv2 = Conv2D(cout, cout, 3)
        self.bn2 = BatchNorm2D(cout)
        self.proj = Conv2D(cin, cout, 1, stride=stride)
        self.bn_proj = BatchNorm2D(cout)

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        shortcut = self.bn_proj(self.proj(x))
        return relu(y + shortcut)


class ResidualIdenBlock(Block):
    """Two 3x3 convolutions with an identity shortcut."""

    def __init__(self, channels: int):
        self.conv1 = Conv2D(channels, channels, 3)
        self.bn1 = BatchNorm2D(channels)
        self.conv2 = Conv2D(channels, channels, 3)
        self.bn2 = BatchNorm2D(channels)

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return relu(y + x)


class SeparableDownBlock(Block):
    """Strided separable pair with a strided 1x1 projection shortcut
    (the downsampling unit of the separable encoder's entry/exit flows)."""

    def __init__(self, cin: int, cout: int):
        self.sep1 = DepthwiseSeparableConv2D(cin, cout, 3, stride=2)
        self.bn1 = BatchNorm2D(cout)
        self.sep2 = DepthwiseSeparableConv2D(cout, cout, 3)
        self.bn2 = BatchNorm2D(cout)
        self.proj = Conv2D(cin, cout, 1, stride=2)
        self.bn_proj = BatchNorm2D(cout)

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(self.bn1(self.sep1(x)))
        y = self.bn2(self.sep2(y))
        shortcut = self.bn_proj(self.proj(x))
        return relu(y + shortcut)


class SeparableMiddleBlock(Block):
    """Three separable convolutions with an identity shortcut, resolution
    preserved (the repeated middle-flow unit)."""

    def __init__(self, channels: int):
        self.sep1 = DepthwiseSeparableConv2D(channels, channels, 3)
        self.bn1 = BatchNorm2D(channels)
        self.sep2 = DepthwiseSeparableConv2D(channels, channels, 3)
        self.bn2 = BatchNorm2D(channels)
        self.sep3 = DepthwiseSeparableConv2D(channels, channels, 3)
        self.bn3 = BatchNorm2D(channels)

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(self.bn1(self.sep1(x)))
        y = relu(self.bn2(self.sep2(y)))
        y = self.bn3(self.sep3(y))
        return relu(y + x)


class Encoder1(Block):
    """Residual encoder: 7x7/2 stem, max-pool, then one projection block plus
    N identity blocks per stage."""

    def __init__(self, cfg: NetworkConfig, in_channels: int = 3):
        c = cfg.stage_channels
        self.stem = Conv2D(in_channels, c[0], 7, stride=2)
        self.stem_bn = BatchNorm2D(c[0])
        stages = []
        cin = c[0]
        for i, repeats in enumerate(cfg.encoder1_stage_repeats):
            cout = c[i + 1]
            stride = 1 if i == 0 else 2  # stage 2 follows the stem max-pool
            blocks = [ResidualConvBlock(cin, cout, stride)]
            blocks += [ResidualIdenBlock(cout) for _ in range(repeats)]
            stages.append(blocks)
            cin = cout
        self.stages = [b for stage in stages for b in stage]
        self._stage_sizes = [len(s) for s in stages]

    def __call__(self, x: Tensor) -> EncoderOutputs:
        e1 = relu(self.stem_bn(self.stem(x)))
        outs = [e1]
        y = maxpool2d(e1)
        i = 0
        for size in self._stage_sizes:
            for _ in range(size):
                y = self.stages[i](y)
                i += 1
            outs.append(y)
        return EncoderOutputs(outs)


class Encoder2(Block):
    """Separable encoder in three flows: entry (stages 1-3), a downsampling
    transition plus repeated middle blocks (stage 4), exit (stage 5).
    Spatial-aware convolutions are all depthwise-separable; only 1x1
    projections are standard."""

    def __init__(self, cfg: NetworkConfig, in_channels: int = 3):
        c = cfg.stage_channels
        self.entry1 = SeparableDownBlock(in_channels, c[0])
        self.entry2 = SeparableDownBlock(c[0], c[1])
        self.entry3 = SeparableDownBlock(c[1], c[2])
        self.transition = SeparableDownBlock(c[2], c[3])
        self.middle = [SeparableMiddleBlock(c[3])
                       for _ in range(cfg.encoder2_middle_repeats)]
        self.exit = SeparableDownBlock(c[3], c[4])

    def __call__(self, x: Tensor) -> EncoderOutputs:
        e1 = self.entry1(x)
        e2 = self.entry2(e1)
        e3 = self.entry3(e2)
        y = self.transition(e3)
        for block in self.middle:
            y = block(y)
        e4 = y
        e5 = self.exit(e4)
        return EncoderOutputs([e1, e2, e3, e4, e5])


class DecoderStage(Block):
    """Upsample x2, concatenate both encoders' matching stage, separable conv."""

    def __init__(self, cin: int, cout: int):
        self.sep = DepthwiseSeparableConv2D(cin, cout, 3)
        self.bn = BatchNorm2D(cout)

    def __call__(self, d: Tensor, skip1: Tensor, skip2: Tensor) -> Tensor:
        up = upsample_nn(d)
        merged = concat_channels([skip1, skip2, up])
        return relu(self.bn(self.sep(merged)))


class Decoder(Block):
    def __init__(self, cfg: NetworkConfig):
        c = cfg.stage_channels
        fused = 2 * c[4]
        stages = []
        prev = fused
        for n in (4, 3, 2, 1):
            cout = c[n - 1]
            stages.append(DecoderStage(2 * c[n - 1] + prev, cout))
            prev = cout
        self.stages = stages
        self.out_conv = Conv2D(c[0], 1, 1)

    def __call__(self, ffm: Tensor, enc1: EncoderOutputs,
                 enc2: EncoderOutputs) -> Tensor:
        d = ffm
        for stage, n in zip(self.stages, (4, 3, 2, 1)):
            d = stage(d, enc1[n], enc2[n])
        return self.out_conv(upsample_nn(d))


class RecognitionHead(Block):
    """GAP -> Dense -> ReLU -> Dropout -> Dense -> softmax."""

    def __init__(self, cin: int, cfg: NetworkConfig):
        self.fc1 = Dense(cin, cfg.fcl_width)
        self.drop = Dropout(cfg.dropout_rate)
        self.fc2 = Dense(cfg.fcl_width, cfg.num_classes)

    def __call__(self, fmap: Tensor) -> Tensor:
        v = relu(self.fc1(global_avg_pool(fmap)))
        return softmax_rows(self.fc2(self.drop(v)))


# -- the assembled network -----------------------------------------------------


def fuse_ffm(e1_top: Tensor, e2_top: Tensor) -> Tensor:
    """Channel-wise fusion of the two deepest maps: [B,H,W,D]+[B,H,W,D] ->
    [B,H,W,2D]."""
    return concat_channels([e1_top, e2_top])


class DermoNet(Block):
    """Full network; ``include_decoder=False`` builds a recognition-only
    variant (cascade classification at the recognition resolution)."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        c = config.stage_channels
        self.encoder1 = Encoder1(config)
        self.encoder2 = Encoder2(config)
        self.decoder = Decoder(config) if config.include_decoder else None
        self.head1 = RecognitionHead(c[4], config)
        self.head2 = RecognitionHead(c[4], config)
        self.head3 = RecognitionHead(2 * c[4], config)

    # -- parameter plumbing ----------------------------------------------

    def named_layers(self):
        return list(iter_layers("", self))

    def named_params(self) -> dict:
        out = {}
        for path, layer in self.named_layers():
            if hasattr(layer, "params"):
                for name, t in layer.params():
                    out[f"{path}.{name}"] = t
        return out

    def named_state(self) -> dict:
        out = {}
        for path, layer in self.named_layers():
            if hasattr(layer, "state"):
                for name, t in layer.state():
                    out[f"{path}.{name}"] = t
        return out

    def named_tensors(self) -> dict:
        out = self.named_params()
        out.update(self.named_state())
        return out

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self.named_params().values())

    def zero_grad(self) -> None:
        for t in self.named_params().values():
            t.grad = None

    def set_mode(self, mode: str) -> None:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        for _, layer in self.named_layers():
            if hasattr(layer, "mode"):
                layer.mode = mode

    def set_dropout_rng(self, rng) -> None:
        gen = make_rng(rng)
        for _, layer in self.named_layers():
            if isinstance(layer, Dropout):
                layer.rng = gen

    def init_weights(self, seed: int) -> None:
        rng = make_rng(seed)
        for _, layer in self.named_layers():
            if hasattr(layer, "init_params"):
                layer.init_params(rng)

    @property
    def expected_hw(self) -> tuple:
        return (self.config.input_hw_detection if self.config.include_decoder
                else self.config.input_hw_recognition)

    def _check_input(self, x: Tensor) -> None:
        h, w = self.expected_hw
        if x.ndim != 4 or x.shape[1:] != (h, w, 3):
            raise ValueError(f"expected input [B,{h},{w},3], got {x.shape}")

    # -- forward passes -----------------------------------------------------

    def encode(self, x: Tensor):
        self._check_input(x)
        enc1 = self.encoder1(x)
        enc2 = self.encoder2(x)
        return enc1, enc2, fuse_ffm(enc1.top, enc2.top)

    def mask_logits(self, x: Tensor) -> Tensor:
        if self.decoder is None:
            raise ValueError("recognition-only network has no decoder")
        enc1, enc2, ffm = self.encode(x)
        return self.decoder(ffm, enc1, enc2)

    def heads_forward(self, e1_top: Tensor, e2_top: Tensor, ffm: Tensor):
        lt1 = self.head1(e1_top)
        lt2 = self.head2(e2_top)
        lt3 = self.head3(ffm)
        # written so that three identical heads average to themselves exactly
        o = lt1 + (lt2 - lt1) / 3.0 + (lt3 - lt1) / 3.0
        return lt1, lt2, lt3, o

    def class_probs(self, x: Tensor) -> Tensor:
        enc1, enc2, ffm = self.encode(x)
        return self.heads_forward(enc1.top, enc2.top, ffm)[3]

    def forward(self, x: Tensor, mode: Optional[str] = None):
        """Returns (mask_probs, class_probs); mask_probs is None for a
        recognition-only network."""
        if mode is not None:
            self.set_mode(mode)
        enc1, enc2, ffm = self.encode(x)
        probs = self.heads_forward(enc1.top, enc2.top, ffm)[3]
        if self.decoder is None:
            return None, probs
        mask = sigmoid(self.decoder(ffm, enc1, enc2))
        return mask, probs

    def __call__(self, x: Tensor, mode: Optional[str] = None):
        return self.forward(x, mode)


