"""U-Net generator and three-headed discriminator, built from config."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

# counts reported for the full-size models (comparison only)
PUBLISHED_GENERATOR_COUNTS = (39_390_917, 14_276)
PUBLISHED_DISCRIMINATOR_COUNTS = (9_385_686, 5_640)


def _as_size(size) -> tuple[int, int]:
    if isinstance(size, int):
        return (size, size)
    h, w = size
    return (int(h), int(w))


@dataclass
class GeneratorConfig:
    input_size: tuple[int, int] = (512, 512)
    in_channels: int = 4
    levels: int = 6
    base_channels: int = 16
    channel_cap: int = 512
    stem_kernel: int = 7
    body_kernel: int = 3
    attention_level: int | None = 32
    attention_max_positions: int = 32 * 32
    dropout_stages: int = 3
    dropout_rate: float = 0.2
    upsample_block_size: int = 2
    leaky_slope: float = 0.2
    initializer: str = "glorot"

    def __post_init__(self):
        self.input_size = _as_size(self.input_size)
        r = self.upsample_block_size
        factor = r ** self.levels
        if self.levels < 1 or any(s % factor for s in self.input_size):
            raise ValueError(f"input size {self.input_size} must be divisible by {r}^{self.levels}={factor}")
        if self.attention_level is not None and self.attention_level not in self.decoder_widths():
            raise ValueError(
                f"attention_level {self.attention_level} is not a decoder width; choose from {self.decoder_widths()}"
            )
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2 ** level, self.channel_cap)

    def decoder_widths(self) -> list[int]:
        r = self.upsample_block_size
        return [self.input_size[1] // r ** k for k in reversed(range(self.levels))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


@dataclass
class DiscriminatorConfig:
    input_size: tuple[int, int] = (512, 512)
    in_channels: int = 4
    encoder_stages: int = 3
    base_channels: int = 32
    channel_cap: int = 512
    stem_kernel: int = 7
    body_kernel: int = 3
    layout_depth: int = 1
    content_depth: int | None = None
    attention: bool = True
    attention_max_positions: int = 64 * 64
    dropout_rate: float = 0.2
    leaky_slope: float = 0.2
    initializer: str = "glorot"

    def __post_init__(self):
        self.input_size = _as_size(self.input_size)
        factor = 2 ** (self.encoder_stages + self.layout_depth)
        if any(s % factor for s in self.input_size):
            raise ValueError(f"input size {self.input_size} must be divisible by 2^(encoder+layout stages)={factor}")
        if self.content_depth is None:
            side = max(self.encoder_output_size())
            depth = int(round(np.log2(side)))
            if 2 ** depth != side:
                raise ValueError(f"encoder output {self.encoder_output_size()} is not a power of two; set content_depth")
            self.content_depth = depth
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def encoder_output_size(self) -> tuple[int, int]:
        f = 2 ** self.encoder_stages
        return (self.input_size[0] // f, self.input_size[1] // f)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


def _check_input(x: Tensor, channels: int, size: tuple[int, int]) -> None:
    if x.ndim != 4 or x.shape[1] != channels or x.shape[2:] != size:
        raise ValueError(f"expected input (n, {channels}, {size[0]}, {size[1]}), got {x.shape}")


class Generator(nn.Module):
    """U-Net: strided-conv encoder, depth-to-space decoder, concatenated skips."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        r = cfg.upsample_block_size
        kw = dict(slope=cfg.leaky_slope, initializer=cfg.initializer)
        ch = [cfg.channels(k) for k in range(cfg.levels + 1)]

        self.enc_blocks = []
        self.downs = []
        cin = cfg.in_channels
        for k in range(cfg.levels):
            first = cfg.stem_kernel if k == 0 else cfg.body_kernel
            self.enc_blocks.append(nn.GenConvBlock(cin, ch[k], rng, first_kernel=first, kernel=cfg.body_kernel, **kw))
            # bias-free: the next block's instance norm cancels any constant offset
            self.downs.append(nn.Conv2d(ch[k], ch[k + 1], cfg.body_kernel, rng, stride=r,
                                        initializer=cfg.initializer, bias=False))
            cin = ch[k + 1]
        self.bottleneck = nn.GenConvBlock(cin, ch[cfg.levels], rng, kernel=cfg.body_kernel, **kw)

        self.ups = []
        self.dec_blocks = []
        self.attention = None
        self.attention_stage = None
        cin = ch[cfg.levels]
        for i, k in enumerate(reversed(range(cfg.levels))):
            self.ups.append(nn.Upsample(cin, ch[k], rng, r=r, kernel=cfg.body_kernel, **kw))
            self.dec_blocks.append(nn.GenConvBlock(2 * ch[k], ch[k], rng, kernel=cfg.body_kernel, **kw))
            if cfg.attention_level is not None and cfg.decoder_widths()[i] == cfg.attention_level:
                self.attention = nn.GatedSelfAttention(ch[k], rng, max_positions=cfg.attention_max_positions,
                                                       initializer=cfg.initializer)
                self.attention_stage = i
            cin = ch[k]
        self.head = nn.Conv2d(ch[0], cfg.in_channels, 1, rng, spectral=False, initializer=cfg.initializer)

    def forward(self, x, training=False, rng=None):
        return self.run(x, training, rng)

    def run(self, x: Tensor, training: bool = False, rng=None, zero_up_stages=(), zero_skips: bool = False) -> Tensor:
        """Forward pass; ``zero_up_stages``/``zero_skips`` blank paths for information-flow probes."""
        cfg = self.cfg
        _check_input(x, cfg.in_channels, cfg.input_size)
        skips = []
        h = x
        for block, down in zip(self.enc_blocks, self.downs):
            h = block(h, training)
            skips.append(h)
            h = down(h, training)
        h = self.bottleneck(h, training)
        for i, (up, block) in enumerate(zip(self.ups, self.dec_blocks)):
            h = up(h, training)
            if i in zero_up_stages:
                h = h * 0.0
            skip = skips[cfg.levels - 1 - i]
            if zero_skips:
                skip = skip * 0.0
            h = block(T.concat_channels([h, skip]), training)
            if i == self.attention_stage:
                h = self.attention(h, training)
            if i < cfg.dropout_stages:
                h = nn.spatial_dropout(h, cfg.dropout_rate, rng, training)
        return nn.hard_sigmoid(self.head(h, training))


class DiscOutput(NamedTuple):
    lowlevel: Tensor
    layout: Tensor
    content: Tensor


class BranchDown(nn.Module):
    """Stride-2 spectral-normalised conv followed by leaky ReLU (no norm, so 1x1 outputs work)."""

    def __init__(self, cin, cout, rng, slope=0.2, initializer="glorot"):
        self.conv = nn.Conv2d(cin, cout, 3, rng, stride=2, initializer=initializer)
        self.slope = slope

    def forward(self, x, training=False, rng=None):
        return nn.leaky_relu(self.conv(x, training), self.slope)


class Discriminator(nn.Module):
    """Shared encoder with low-level, layout and content heads."""

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        kw = dict(slope=cfg.leaky_slope, initializer=cfg.initializer)
        c = cfg.base_channels
        self.stem = nn.ConvUnit(cfg.in_channels, c, cfg.stem_kernel, rng, **kw)
        self.blocks = []
        self.downs = []
        for _ in range(cfg.encoder_stages):
            nxt = min(2 * c, cfg.channel_cap)
            self.blocks.append(nn.DiscConvBlock(c, c, rng, kernel=cfg.body_kernel, **kw))
            self.downs.append(nn.Conv2d(c, nxt, cfg.body_kernel, rng, stride=2, initializer=cfg.initializer,
                                        bias=False))
            c = nxt
        self.attention = None
        if cfg.attention:
            h, w = cfg.encoder_output_size()
            if h * w > cfg.attention_max_positions:
                raise ValueError(f"discriminator attention over {h}x{w} exceeds cap {cfg.attention_max_positions}")
            self.attention = nn.GatedSelfAttention(c, rng, max_positions=cfg.attention_max_positions,
                                                   initializer=cfg.initializer)
        self.lowlevel_head = nn.Conv2d(c, 1, 3, rng, spectral=False, initializer=cfg.initializer)
        self.layout_stages = [BranchDown(c, c, rng, **kw) for _ in range(cfg.layout_depth)]
        self.layout_reduce = nn.Conv2d(c, 1, 1, rng, initializer=cfg.initializer)
        self.layout_head = nn.Conv2d(1, 1, 3, rng, spectral=False, initializer=cfg.initializer)
        self.content_stages = [BranchDown(c, c, rng, **kw) for _ in range(cfg.content_depth)]
        self.content_head = nn.Conv2d(c, 1, 1, rng, spectral=False, initializer=cfg.initializer)

    def forward(self, x, training=False, rng=None) -> DiscOutput:
        cfg = self.cfg
        _check_input(x, cfg.in_channels, cfg.input_size)
        h = self.stem(x, training)
        for block, down in zip(self.blocks, self.downs):
            h = down(block(h, training), training)
        if self.attention is not None:
            h = self.attention(h, training)
        lowlevel = self.lowlevel_head(h, training)

        lay = h
        for stage in self.layout_stages:
            lay = stage(lay, training)
        lay = nn.leaky_relu(self.layout_reduce(lay, training), cfg.leaky_slope)
        lay = nn.standard_dropout(lay, cfg.dropout_rate, rng, training)
        layout = self.layout_head(lay, training)

        con = h
        for stage in self.content_stages:
            con = stage(con, training)
        con = nn.spatial_dropout(con, cfg.dropout_rate, rng, training)
        con = con.mean(axis=(2, 3), keepdims=True)
        content = self.content_head(con, training)
        return DiscOutput(lowlevel, layout, content)


def build_generator(cfg: GeneratorConfig, rng: np.random.Generator) -> Generator:
    return Generator(cfg, rng)


def build_discriminator(cfg: DiscriminatorConfig, rng: np.random.Generator) -> Discriminator:
    return Discriminator(cfg, rng)


def count_parameters(model: nn.Module) -> tuple[int, int, int]:
    """(total, trainable, non_trainable); non-trainable entries are spectral-norm ``u`` vectors."""
    trainable = sum(t.size for _, t in model.named_parameters())
    non_trainable = sum(t.size for _, t in model.named_buffers())
    return trainable + non_trainable, trainable, non_trainable


def layer_table(model: nn.Module) -> list[tuple[str, tuple[int, ...], int, bool]]:
    rows = [(name, t.shape, t.size, True) for name, t in model.named_parameters()]
    rows += [(name, t.shape, t.size, False) for name, t in model.named_buffers()]
    return rows


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    """All parameters and buffers keyed by dotted name."""
    return {name: t.data for name, t in model._named_tensors()}


def load_state_arrays(model: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    tensors = dict(model._named_tensors())
    if set(tensors) != set(arrays):
        missing = sorted(set(tensors) - set(arrays))
        extra = sorted(set(arrays) - set(tensors))
        raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, t in tensors.items():
        arr = arrays[name]
        if arr.size != t.size:
            raise ValueError(f"{name}: stored {arr.shape} does not fit parameter {t.shape}")
        t.data = np.asarray(arr, dtype=t.dtype).reshape(t.shape).copy()
    for m in model.modules():
        if isinstance(m, nn.SpectralNormState):
            m.v = None


def freeze_spectral_norm(model: nn.Module, frozen: bool = True) -> None:
    """Pin every spectral-norm (u, v) pair at its current value (for gradient checks)."""
    for m in model.modules():
        if isinstance(m, nn.SpectralNormState):
            m.frozen = frozen
