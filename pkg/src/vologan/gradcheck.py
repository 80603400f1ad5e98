"""Registry of finite-difference gradient checks for every layer and loss term.

Each case builds a scalar function and the tensors it is checked against.
Dropout masks are redrawn from a fixed seed on every call and spectral-norm
vectors are frozen so that each case is a fixed smooth function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import nn
from . import tensor as T
from .models import DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator, freeze_spectral_norm
from .tensor import Tensor, finite_diff_check, precision

TOLERANCE = 1e-3


@dataclass
class GradCase:
    name: str
    kind: str  # "op", "layer", "loss" or "model"
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]
    max_entries: int | None = None


def _param(rng, *shape, scale=1.0, offset=0.0):
    return Tensor(rng.standard_normal(shape) * scale + offset, requires_grad=True)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Random linear read-out so every output entry contributes to the scalar."""
    c = Tensor(rng.standard_normal(out.shape))
    return lambda y: (y * c).sum()


def _layer_case(make_module, in_shape, training=False, seed=3):
    def build(rng):
        module = make_module(rng).astype(T.default_dtype())
        freeze_spectral_norm(module)
        x = _param(rng, *in_shape)

        def run():
            return module(x, training, np.random.default_rng(seed))

        read = _project(run(), rng)
        return (lambda: read(run())), [x] + module.parameters()
    return build


def _fn_case(fn, *shapes, positive=False):
    def build(rng):
        xs = [_param(rng, *s) for s in shapes]
        if positive:
            for x in xs:
                x.data = np.abs(x.data) + 0.5
        read = _project(fn(*xs), rng)
        return (lambda: read(fn(*xs))), xs
    return build


def _unit_interval(rng, *shape):
    return Tensor(rng.uniform(0.05, 0.95, shape), requires_grad=True)


def _loss_case(fn, n_inputs, shape=(2, 4, 5, 5)):
    def build(rng):
        xs = [_unit_interval(rng, *shape) for _ in range(n_inputs)]
        return (lambda: fn(*xs)), xs
    return build


def _ssim_single(x, y):
    return L.ssim(x, y)


def _gamma(module, value=0.7):
    module.gate.gamma.data = np.full(1, value)
    return module


def _tiny_generator(rng):
    cfg = GeneratorConfig(input_size=8, levels=2, base_channels=2, channel_cap=8, stem_kernel=3,
                          attention_level=4, attention_max_positions=64)
    g = build_generator(cfg, rng)
    # push the head into the linear part of the hard sigmoid
    g.head.weight.data *= 0.1
    _gamma(g.attention)
    return g


def _tiny_discriminator(rng):
    cfg = DiscriminatorConfig(input_size=16, encoder_stages=2, base_channels=2, channel_cap=8, stem_kernel=3,
                              attention_max_positions=64)
    d = build_discriminator(cfg, rng)
    _gamma(d.attention)
    return d


def _disc_scalar(rng):
    d = _tiny_discriminator(rng).astype(T.default_dtype())
    freeze_spectral_norm(d)
    x = _param(rng, 2, 4, 16, 16)

    def run():
        out = d(x, True, np.random.default_rng(5))
        return L.generator_adv_from_heads(out)

    return run, [x] + d.parameters()


def _generator_scalar(rng):
    g = _tiny_generator(rng).astype(T.default_dtype())
    freeze_spectral_norm(g)
    x = Tensor(rng.uniform(0, 1, (2, 4, 8, 8)), requires_grad=True)
    y = Tensor(rng.uniform(0, 1, (2, 4, 8, 8)))
    weights = L.LossWeights()

    def run():
        out = g(x, True, np.random.default_rng(5))
        pix, _ = L.channelwise(lambda a, b: T.square(a - b).mean(), (out, y), weights.lambda_channel)
        return pix

    return run, [x] + g.parameters()


def _total_generator(rng):
    xs = [_unit_interval(rng, 2, 4, 4, 4) for _ in range(4)]
    adv_in = [_param(rng, 2, 1, 2, 2), _param(rng, 2, 1, 1, 1), _param(rng, 2, 1, 1, 1)]
    w = L.LossWeights()

    def run():
        s, t, a, b = xs

        def pix(p, q, u, v):
            return L.pixel_loss(p, q, u, v, epoch=0, epoch_sw=w.epoch_sw)

        cyc, _ = L.channelwise(pix, (a, b, s, t), w.lambda_channel)
        ide, _ = L.channelwise(pix, (b, a, s, t), w.lambda_channel)
        ss, _ = L.channelwise(L.ssim_loss, (s, t, a, b), w.lambda_channel)
        adv = L.generator_adv_from_heads(adv_in)
        return L.total_generator_loss({"adv": adv, "cyc": cyc, "ide": ide, "ssim": ss}, w).total

    return run, xs + adv_in


def _total_discriminator(rng):
    real = [_param(rng, 2, 1, 3, 3), _param(rng, 2, 1, 2, 2), _param(rng, 2, 1, 1, 1)]
    fake = [_param(rng, 2, 1, 3, 3), _param(rng, 2, 1, 2, 2), _param(rng, 2, 1, 1, 1)]
    return (lambda: L.total_discriminator_loss(*L.discriminator_head_losses(real, fake))), real + fake


CASES: list[GradCase] = [
    # elementary ops
    GradCase("add_broadcast", "op", _fn_case(lambda a, b: a + b, (3, 4), (4,))),
    GradCase("mul_broadcast", "op", _fn_case(lambda a, b: a * b, (2, 3, 4), (3, 1))),
    GradCase("div", "op", _fn_case(lambda a, b: a / b, (3, 4), (3, 4), positive=True)),
    GradCase("sqrt", "op", _fn_case(T.sqrt, (3, 4), positive=True)),
    GradCase("power", "op", _fn_case(lambda a: T.power(a, 1.7), (3, 4), positive=True)),
    GradCase("exp", "op", _fn_case(T.exp, (3, 4))),
    GradCase("mean_axes", "op", _fn_case(lambda a: a.mean(axis=(1, 2), keepdims=True), (2, 3, 4))),
    GradCase("matmul_batched", "op", _fn_case(T.matmul_batched, (2, 3, 4), (2, 4, 5))),
    GradCase("softmax_rows", "op", _fn_case(T.softmax_rows, (2, 3, 5))),
    GradCase("concat_slice", "op", _fn_case(
        lambda a, b: T.slice_channels(T.concat_channels([a, b]), 1, 4), (2, 2, 3, 3), (2, 3, 3, 3))),
    GradCase("concat_slice_batch", "op", _fn_case(
        lambda a, b: T.slice_batch(T.concat_batch([a, b]), 1, 3), (2, 2, 3, 3), (2, 2, 3, 3))),
    GradCase("reflection_pad", "op", _fn_case(lambda a: T.reflection_pad(a, ((2, 1), (1, 3))), (2, 2, 4, 5))),
    GradCase("zero_pad", "op", _fn_case(lambda a: T.zero_pad(a, 2), (1, 2, 3, 3))),
    GradCase("conv2d_reflect", "op", _fn_case(
        lambda x, w, b: T.conv2d(x, w, b, padding=1, padding_mode="reflect"), (2, 3, 6, 5), (4, 3, 3, 3), (4,))),
    GradCase("conv2d_stride2", "op", _fn_case(
        lambda x, w: T.conv2d(x, w, stride=2, padding=1), (2, 3, 7, 6), (2, 3, 3, 3))),
    GradCase("conv2d_1x1", "op", _fn_case(lambda x, w: T.conv2d(x, w), (2, 3, 4, 4), (5, 3, 1, 1))),
    GradCase("depth_to_space", "op", _fn_case(lambda x: T.depth_to_space(x, 2), (2, 8, 3, 3))),
    GradCase("space_to_depth", "op", _fn_case(lambda x: T.space_to_depth(x, 2), (2, 2, 4, 6))),
    # layers
    GradCase("leaky_relu", "layer", _fn_case(nn.leaky_relu, (3, 5))),
    GradCase("hard_sigmoid", "layer", _fn_case(nn.hard_sigmoid, (3, 5))),
    GradCase("instance_norm", "layer", _layer_case(lambda r: nn.InstanceNorm(3), (2, 3, 4, 4))),
    GradCase("spectral_conv", "layer", _layer_case(lambda r: nn.Conv2d(3, 4, 3, r), (2, 3, 5, 5))),
    GradCase("spatial_dropout", "layer", _fn_case(
        lambda x: nn.spatial_dropout(x, 0.4, np.random.default_rng(1), True), (2, 6, 3, 3))),
    GradCase("standard_dropout", "layer", _fn_case(
        lambda x: nn.standard_dropout(x, 0.4, np.random.default_rng(1), True), (2, 3, 3, 3))),
    GradCase("gen_conv_block", "layer", _layer_case(lambda r: nn.GenConvBlock(3, 4, r, first_kernel=5), (2, 3, 6, 6))),
    GradCase("disc_conv_block", "layer", _layer_case(lambda r: nn.DiscConvBlock(3, 4, r), (2, 3, 5, 5))),
    GradCase("upsample", "layer", _layer_case(lambda r: nn.Upsample(4, 3, r), (2, 4, 3, 3))),
    GradCase("gated_self_attention", "layer",
             _layer_case(lambda r: _gamma(nn.GatedSelfAttention(8, r)), (2, 8, 3, 3))),
    # loss terms
    GradCase("adv_discriminator", "loss", _fn_case(lambda a, b: L.adv_loss_discriminator(a, b), (2, 1, 3, 3), (2, 1, 3, 3))),
    GradCase("adv_generator", "loss", _fn_case(lambda a: L.adv_loss_generator(a), (2, 1, 3, 3))),
    GradCase("pixel_mae", "loss", _loss_case(lambda a, b, c, d: L.pixel_loss(a, b, c, d, 0, 40), 4)),
    GradCase("pixel_mse", "loss", _loss_case(lambda a, b, c, d: L.pixel_loss(a, b, c, d, 41, 40), 4)),
    GradCase("ssim", "loss", _loss_case(_ssim_single, 2, (3, 1, 4, 4))),
    GradCase("ssim_loss_channelwise", "loss", _loss_case(
        lambda a, b, c, d: L.channelwise(L.ssim_loss, (a, b, c, d), L.LossWeights().lambda_channel)[0], 4)),
    GradCase("total_generator", "loss", _total_generator),
    GradCase("total_discriminator", "loss", _total_discriminator),
    # whole networks (subsampled entries)
    GradCase("generator", "model", _generator_scalar, max_entries=6),
    GradCase("discriminator", "model", _disc_scalar, max_entries=6),
]


def run_case(case: GradCase, seed: int = 0, eps: float = 1e-4, bits: int = 64) -> float:
    rng = np.random.default_rng([seed, sum(case.name.encode())])
    with precision(bits):
        f, params = case.build(rng)
        return finite_diff_check(f, params, eps=eps, max_entries=case.max_entries,
                                 rng=np.random.default_rng(seed))


def run_all(seed: int = 0, eps: float = 1e-4, names=None) -> dict[str, float]:
    return {c.name: run_case(c, seed, eps) for c in CASES if names is None or c.name in names}
