"""Residual-network emotion classifier with statistics pooling.

The spectrogram is treated as a 1-channel image (mel channels x frames).
A conv stem (plus 3x3/2 max-pool) and four residual stages produce a
C x nu' x T' map; the frequency axis is collapsed by mean, statistics
pooling concatenates per-channel mean and standard deviation over the
remaining frames, and a two-layer FC head maps the pooled vector to
class logits. Because pooling reduces any number of frames to one
vector, the network accepts variable-length input at evaluation time.

Presets: "paper" is the canonical ResNet34 layout (blocks 3-4-6-3, 32
channels in the first stage, 7x7 stride-2 stem); "lite" is a desk-scale
variant (blocks 1-1-1-1, 8 base channels, 3x3 stride-2 stem). Both
halve time five times, so the minimum input length is 32 frames.

Pooling substitutes for ablations: "mean_only" drops the standard
deviation half, and "none_fixed_length" truncates/pads the input to a
fixed 300 frames and then takes the temporal mean, mimicking systems
without a pooling layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as en
from .dsp import MelSpectrogram
from .errors import ConfigError, DataError
from .tensor import Tensor

POOLING_MODES = ("statistics", "mean_only", "none_fixed_length")
FIXED_LEN_FRAMES = 300  # input length used by the none_fixed_length substitute
EPS_STD = 1e-9  # inside the pooled std, keeps sqrt differentiable at zero variance
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
PRELU_INIT = 0.25


@dataclass(frozen=True)
class ResNetConfig:
    """Backbone layout; presets pin the values used by experiments."""

    preset: str = "lite"
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    base_channels: int = 8
    stage_strides: tuple[int, ...] = (1, 2, 2, 2)
    stem_kernel: int = 3
    stem_stride: int = 2
    stem_pool: bool = True
    in_channels: int = 1

    def validate(self) -> None:
        if len(self.blocks_per_stage) != len(self.stage_strides):
            raise ConfigError("blocks_per_stage and stage_strides must align")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("every stage needs at least one block")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.stem_kernel % 2 != 1:
            raise ConfigError("stem_kernel must be odd")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2**i for i in range(len(self.blocks_per_stage)))

    @property
    def final_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def min_input_frames(self) -> int:
        """Product of time-axis strides; shorter inputs are rejected."""
        frames = self.stem_stride * (2 if self.stem_pool else 1)
        for s in self.stage_strides:
            frames *= s
        return frames


PRESETS = {
    "paper": ResNetConfig("paper", (3, 4, 6, 3), 32, (1, 2, 2, 2), 7, 2, True),
    "lite": ResNetConfig("lite", (1, 1, 1, 1), 8, (1, 2, 2, 2), 3, 2, True),
}


def preset_config(name: str) -> ResNetConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown model preset '{name}' (expected one of {', '.join(sorted(PRESETS))})"
        ) from None


# ---------------------------------------------------------------------------
# Layers


class Conv2d:
    def __init__(self, rng, c_in, c_out, kernel, stride=1, padding=0, dtype=np.float32):
        fan_in = c_in * kernel * kernel
        std = math.sqrt(2.0 / fan_in)
        init = rng.standard_normal((c_out, c_in, kernel, kernel)) * std
        self.weight = Tensor(init.astype(dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return en.conv2d(x, self.weight, None, stride=self.stride, padding=self.padding)

    def parameters(self):
        yield "weight", self.weight


class BatchNorm2d:
    def __init__(self, channels, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.frozen = False  # frozen backbone BNs run in eval mode during training

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return en.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=training and not self.frozen,
            momentum=BN_MOMENTUM, eps=BN_EPS,
        )

    def parameters(self):
        yield "gamma", self.gamma
        yield "beta", self.beta

    def buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var


class PReLU:
    def __init__(self, channels, dtype=np.float32):
        self.slope = Tensor(np.full(channels, PRELU_INIT, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return en.prelu(x, self.slope)

    def parameters(self):
        yield "slope", self.slope


class Linear:
    def __init__(self, rng, n_in, n_out, dtype=np.float32):
        std = math.sqrt(2.0 / n_in)
        init = rng.standard_normal((n_in, n_out)) * std
        self.weight = Tensor(init.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return en.linear(x, self.weight, self.bias)

    def parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias


class ResidualBlock:
    """conv-BN-PReLU-conv-BN plus identity/projection shortcut, PReLU
    after the add."""

    def __init__(self, rng, c_in, c_out, stride, dtype=np.float32):
        self.conv1 = Conv2d(rng, c_in, c_out, 3, stride=stride, padding=1, dtype=dtype)
        self.bn1 = BatchNorm2d(c_out, dtype)
        self.act1 = PReLU(c_out, dtype)
        self.conv2 = Conv2d(rng, c_out, c_out, 3, stride=1, padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(c_out, dtype)
        if stride != 1 or c_in != c_out:
            self.proj_conv = Conv2d(rng, c_in, c_out, 1, stride=stride, padding=0, dtype=dtype)
            self.proj_bn = BatchNorm2d(c_out, dtype)
        else:
            self.proj_conv = None
            self.proj_bn = None
        self.act_out = PReLU(c_out, dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        y = self.act1(self.bn1(self.conv1(x), training))
        y = self.bn2(self.conv2(y), training)
        shortcut = x if self.proj_conv is None else self.proj_bn(self.proj_conv(x), training)
        return self.act_out(y + shortcut)

    def submodules(self):
        yield "conv1", self.conv1
        yield "bn1", self.bn1
        yield "act1", self.act1
        yield "conv2", self.conv2
        yield "bn2", self.bn2
        if self.proj_conv is not None:
            yield "proj_conv", self.proj_conv
            yield "proj_bn", self.proj_bn
        yield "act_out", self.act_out


# ---------------------------------------------------------------------------
# Classifier


class EmotionClassifier:
    """Backbone + pooling + FC head; see module docstring for layout."""

    def __init__(
        self,
        config: ResNetConfig,
        pooling: str,
        n_classes: int,
        rng: np.random.Generator,
        head_hidden: int = 256,
        dtype: type = np.float32,
    ):
        config.validate()
        if pooling not in POOLING_MODES:
            raise ConfigError(
                f"unknown pooling '{pooling}' (expected one of {', '.join(POOLING_MODES)})"
            )
        if n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {n_classes}")
        self.config = config
        self.pooling = pooling
        self.n_classes = n_classes
        self.head_hidden = head_hidden
        self.dtype = dtype
        self.frozen_backbone = False
        self.training = True

        pad = config.stem_kernel // 2
        self.stem_conv = Conv2d(
            rng, config.in_channels, config.base_channels, config.stem_kernel,
            stride=config.stem_stride, padding=pad, dtype=dtype,
        )
        self.stem_bn = BatchNorm2d(config.base_channels, dtype)
        self.stem_act = PReLU(config.base_channels, dtype)

        self.stages = []
        c_in = config.base_channels
        for n_blocks, stride, c_out in zip(
            config.blocks_per_stage, config.stage_strides, config.stage_channels
        ):
            blocks = []
            for j in range(n_blocks):
                blocks.append(ResidualBlock(rng, c_in, c_out, stride if j == 0 else 1, dtype))
                c_in = c_out
            self.stages.append(blocks)

        _init_head(self, rng)

    @property
    def pooled_width(self) -> int:
        c = self.config.final_channels
        return 2 * c if self.pooling == "statistics" else c

    @property
    def min_input_frames(self) -> int:
        return self.config.min_input_frames

    # -- modes

    def train(self) -> "EmotionClassifier":
        self.training = True
        return self

    def eval(self) -> "EmotionClassifier":
        self.training = False
        return self

    # -- parameter registry

    def named_modules(self):
        yield "stem.conv", self.stem_conv
        yield "stem.bn", self.stem_bn
        yield "stem.act", self.stem_act
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage):
                for sub_name, sub in block.submodules():
                    yield f"stage{i}.block{j}.{sub_name}", sub
        yield "head.fc1", self.head_fc1
        yield "head.act", self.head_act
        yield "head.fc2", self.head_fc2

    def named_parameters(self):
        for mod_name, mod in self.named_modules():
            for p_name, p in mod.parameters():
                yield f"{mod_name}.{p_name}", p

    def named_buffers(self):
        for mod_name, mod in self.named_modules():
            if hasattr(mod, "buffers"):
                for b_name, b in mod.buffers():
                    yield f"{mod_name}.{b_name}", b

    def backbone_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith("head."):
                yield name, p

    def head_parameters(self):
        for name, p in self.named_parameters():
            if name.startswith("head."):
                yield name, p

    def trainable_parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters() if p.requires_grad]

    def backbone_bns(self):
        for name, mod in self.named_modules():
            if isinstance(mod, BatchNorm2d) and not name.startswith("head."):
                yield mod

    # -- forward

    def forward_batch(self, batch: np.ndarray) -> Tensor:
        """(N, T, nu) chunk array -> (N, K) logits tensor."""
        if batch.ndim != 3:
            raise DataError(f"expected (N, T, nu) batch, got shape {batch.shape}")
        if self.pooling == "none_fixed_length":
            batch = _fit_length(batch, FIXED_LEN_FRAMES)
        elif batch.shape[1] < self.min_input_frames:
            raise DataError(
                f"input has {batch.shape[1]} frames; this model needs at least "
                f"{self.min_input_frames}"
            )
        # channels-last image: (N, H=mel, W=time, C=1)
        image = np.ascontiguousarray(batch.transpose(0, 2, 1), dtype=self.dtype)[..., None]
        x = Tensor(image)

        t = self.training
        h = self.stem_act(self.stem_bn(self.stem_conv(x), t))
        if self.config.stem_pool:
            h = en.max_pool2d(h, kernel=3, stride=2, padding=1)
        for stage in self.stages:
            for block in stage:
                h = block(h, t)
        h = en.mean_over_axis(h, axis=1)  # collapse frequency: (N, T', C)
        if self.pooling == "statistics":
            pooled = en.mean_std_over_time(en.swap_last_two(h), EPS_STD)
        else:
            pooled = en.mean_over_axis(h, axis=1)
        return self.head_fc2(self.head_act(self.head_fc1(pooled)))

    def forward_segment(self, spec: MelSpectrogram) -> np.ndarray:
        """Full-length forward of one normalized spectrogram -> (K,) logits."""
        if not spec.normalized:
            raise DataError("classifier input must be a normalized spectrogram")
        out = self.forward_batch(spec.frames[None, :, :])
        return out.data[0]


def _fit_length(batch: np.ndarray, length: int) -> np.ndarray:
    """Truncate or right-pad the time axis to exactly `length` frames."""
    t = batch.shape[1]
    if t == length:
        return batch
    if t > length:
        return batch[:, :length, :]
    pad = np.zeros((batch.shape[0], length - t, batch.shape[2]), dtype=batch.dtype)
    return np.concatenate([batch, pad], axis=1)


def build(
    config: ResNetConfig,
    pooling: str,
    n_classes: int,
    rng: np.random.Generator,
    head_hidden: int = 256,
    dtype: type = np.float32,
) -> EmotionClassifier:
    """Construct and He-initialize a classifier; deterministic given rng.

    Conv/linear weights get fan-in scaled normal draws, biases start at
    zero, PReLU slopes at 0.25, BN gamma/beta at 1/0.
    """
    return EmotionClassifier(config, pooling, n_classes, rng, head_hidden, dtype)


def _init_head(model: EmotionClassifier, rng: np.random.Generator) -> None:
    model.head_fc1 = Linear(rng, model.pooled_width, model.head_hidden, model.dtype)
    model.head_act = PReLU(model.head_hidden, model.dtype)
    model.head_fc2 = Linear(rng, model.head_hidden, model.n_classes, model.dtype)


def replace_head(model: EmotionClassifier, n_classes: int, rng: np.random.Generator) -> EmotionClassifier:
    """Swap in a freshly initialized head for `n_classes`; the backbone
    (parameters and BN running stats) is untouched."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    model.n_classes = n_classes
    _init_head(model, rng)
    return model


def freeze_backbone(model: EmotionClassifier) -> EmotionClassifier:
    """Exclude backbone parameters from training; backbone BNs run in
    eval mode (no running-stat updates) while frozen."""
    for _, p in model.backbone_parameters():
        p.requires_grad = False
    for bn in model.backbone_bns():
        bn.frozen = True
    model.frozen_backbone = True
    return model


def unfreeze_backbone(model: EmotionClassifier) -> EmotionClassifier:
    for _, p in model.backbone_parameters():
        p.requires_grad = True
    for bn in model.backbone_bns():
        bn.frozen = False
    model.frozen_backbone = False
    return model


def config_to_dict(model: EmotionClassifier) -> dict:
    cfg = model.config
    return {
        "preset": cfg.preset,
        "blocks_per_stage": list(cfg.blocks_per_stage),
        "base_channels": cfg.base_channels,
        "stage_strides": list(cfg.stage_strides),
        "stem_kernel": cfg.stem_kernel,
        "stem_stride": cfg.stem_stride,
        "stem_pool": cfg.stem_pool,
        "in_channels": cfg.in_channels,
        "pooling": model.pooling,
        "n_classes": model.n_classes,
        "head_hidden": model.head_hidden,
    }


def config_from_dict(d: dict) -> tuple[ResNetConfig, str, int, int]:
    cfg = ResNetConfig(
        preset=d["preset"],
        blocks_per_stage=tuple(d["blocks_per_stage"]),
        base_channels=d["base_channels"],
        stage_strides=tuple(d["stage_strides"]),
        stem_kernel=d["stem_kernel"],
        stem_stride=d["stem_stride"],
        stem_pool=d["stem_pool"],
        in_channels=d["in_channels"],
    )
    return cfg, d["pooling"], d["n_classes"], d["head_hidden"]
