"""Layers used by the generator and discriminator.

Modules are light parameter containers.  A tensor attribute that requires
grad is a trainable parameter; one that does not is a non-trainable buffer
(the spectral-norm ``u`` vectors).  Child modules and lists of modules are
walked recursively so parameter names are stable dotted paths.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

LEAKY_SLOPE = 0.2
IN_EPS = 1e-5
SN_EPS = 1e-12


class Module:
    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None):
        return self.forward(x, training=training, rng=rng)

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def _named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            else:
                yield from value._named_tensors(full + ".")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._named_tensors(prefix) if t.requires_grad)

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._named_tensors(prefix) if not t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (e.g. to float64 for gradient checks)."""
        for _, t in self._named_tensors():
            t.data = t.data.astype(dtype)
        for m in self.modules():
            if isinstance(m, SpectralNormState) and m.v is not None:
                m.v = m.v.astype(dtype)
        return self


# -- activations and dropout -------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return T.leaky_relu_raw(x, slope)


def hard_sigmoid(x: Tensor) -> Tensor:
    """clip(0.2 x + 0.5, 0, 1): reaches 0 and 1 exactly once saturated."""
    return T.clip(x * 0.2 + 0.5, 0.0, 1.0)


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")


def spatial_dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Drop whole (sample, channel) feature maps with probability ``rate``."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("spatial_dropout in training mode needs an rng")
    keep = rng.random((x.shape[0], x.shape[1]) + (1,) * (x.ndim - 2)) >= rate
    return x * (keep.astype(x.dtype) / (1.0 - rate))


def standard_dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("standard_dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    return x * (keep.astype(x.dtype) / (1.0 - rate))


# -- normalisation ---------------------------------------------------------------

def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = IN_EPS) -> Tensor:
    n, c, h, w = x.shape
    if h * w < 2:
        raise ValueError(f"instance_norm needs at least 2 spatial positions, got {(h, w)}")
    mu = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mu
    var = T.square(centered).mean(axis=(2, 3), keepdims=True)
    normed = centered / T.sqrt(var + eps)
    return normed * gain.reshape(1, c, 1, 1) + bias.reshape(1, c, 1, 1)


class InstanceNorm(Module):
    def __init__(self, channels: int, eps: float = IN_EPS):
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.eps = eps

    def forward(self, x, training=False, rng=None):
        return instance_norm(x, self.gain, self.bias, self.eps)


def _l2normalize(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), SN_EPS)


class SpectralNormState(Module):
    """Persistent left-singular-vector estimate for one weight.

    ``u`` is a non-trainable buffer of length ``co``.  ``v`` is a transient
    cache; when ``frozen`` is set the cached pair is reused verbatim so that
    the normalised weight is a fixed smooth function of the raw weight, which
    is what finite-difference checks need.
    """

    def __init__(self, out_channels: int, rng: np.random.Generator, n_power_iterations: int = 1):
        self.u = Tensor(_l2normalize(rng.standard_normal(out_channels)))
        self.n_power_iterations = n_power_iterations
        self.v: np.ndarray | None = None
        self.frozen = False


def spectral_norm_apply(weight: Tensor, state: SpectralNormState, update: bool = True,
                        n_iterations: int | None = None) -> Tensor:
    """Return ``weight / sigma`` with sigma estimated by power iteration.

    The weight is viewed as a ``co x (ci*kh*kw)`` matrix.  When ``update`` is
    set, ``n_iterations`` (default: the state's count) power steps refine
    ``u`` in place; the vectors themselves are treated as constants by the
    backward pass, while sigma = u^T W v stays differentiable in W.
    """
    co = weight.shape[0]
    mat = weight.data.reshape(co, -1)
    if state.frozen and state.v is not None:
        u, v = state.u.data, state.v
    else:
        u = state.u.data.astype(mat.dtype)
        steps = state.n_power_iterations if n_iterations is None else n_iterations
        v = _l2normalize(mat.T @ u)
        for _ in range(steps if update else 0):
            v = _l2normalize(mat.T @ u)
            wv = mat @ v
            if np.linalg.norm(wv) > SN_EPS:
                u = wv / np.linalg.norm(wv)
        if update:
            state.u.data = u.astype(state.u.dtype)
        state.v = v
    outer = np.outer(u, v).reshape(weight.shape).astype(weight.dtype)
    sigma = (weight * outer).sum()
    if float(sigma.data) < SN_EPS:
        sigma = Tensor(SN_EPS, dtype=weight.dtype)
    return weight / sigma


# -- convolutions ------------------------------------------------------------------

class Conv2d(Module):
    """Convolution with optional spectral normalisation and reflection padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, spectral: bool = True, padding_mode: str = "reflect",
                 initializer: str = "glorot", bias: bool = True):
        from .optim import init_uniform, he_uniform

        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        shape = (out_channels, in_channels, kernel, kernel)
        if initializer == "glorot":
            w = init_uniform(shape, fan_in, fan_out, rng)
        elif initializer == "he":
            w = he_uniform(shape, fan_in, rng)
        else:
            raise ValueError(f"unknown initializer {initializer!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None
        self.sn = SpectralNormState(out_channels, rng) if spectral else None
        self.stride = stride
        self.padding = (kernel - 1) // 2
        self.padding_mode = padding_mode
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel

    def effective_weight(self, training: bool) -> Tensor:
        if self.sn is None:
            return self.weight
        return spectral_norm_apply(self.weight, self.sn, update=training)

    def forward(self, x, training=False, rng=None):
        return T.conv2d(x, self.effective_weight(training), self.bias, self.stride,
                        self.padding, self.padding_mode)


class ConvUnit(Module):
    """reflection pad -> spectral-normalised conv -> instance norm -> leaky ReLU.

    The conv has no bias: the instance norm would subtract it again.
    """

    def __init__(self, cin: int, cout: int, kernel: int, rng, stride: int = 1,
                 slope: float = LEAKY_SLOPE, initializer: str = "glorot"):
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, initializer=initializer, bias=False)
        self.norm = InstanceNorm(cout)
        self.slope = slope

    def forward(self, x, training=False, rng=None):
        x = self.conv(x, training)
        return leaky_relu(self.norm(x), self.slope)


class GenConvBlock(Module):
    """Generator block: two conv units; the first may use a wider kernel (stem)."""

    def __init__(self, cin: int, cout: int, rng, first_kernel: int = 3, kernel: int = 3,
                 slope: float = LEAKY_SLOPE, initializer: str = "glorot"):
        self.units = [
            ConvUnit(cin, cout, first_kernel, rng, slope=slope, initializer=initializer),
            ConvUnit(cout, cout, kernel, rng, slope=slope, initializer=initializer),
        ]

    def forward(self, x, training=False, rng=None):
        for unit in self.units:
            x = unit(x, training)
        return x


class DiscConvBlock(Module):
    """Discriminator block: a single conv unit."""

    def __init__(self, cin: int, cout: int, rng, kernel: int = 3, slope: float = LEAKY_SLOPE,
                 initializer: str = "glorot"):
        self.unit = ConvUnit(cin, cout, kernel, rng, slope=slope, initializer=initializer)

    def forward(self, x, training=False, rng=None):
        return self.unit(x, training)


class Upsample(Module):
    """Conv expanding channels by r^2, then depth-to-space, norm and activation."""

    def __init__(self, cin: int, cout: int, rng, r: int = 2, kernel: int = 3,
                 slope: float = LEAKY_SLOPE, initializer: str = "glorot"):
        self.conv = Conv2d(cin, cout * r * r, kernel, rng, initializer=initializer, bias=False)
        self.norm = InstanceNorm(cout)
        self.r = r
        self.slope = slope

    def forward(self, x, training=False, rng=None):
        x = T.depth_to_space(self.conv(x, training), self.r)
        return leaky_relu(self.norm(x), self.slope)


# -- attention -----------------------------------------------------------------------

class AttentionGate(Module):
    def __init__(self):
        self.gamma = Tensor(np.zeros(1), requires_grad=True)


class GatedSelfAttention(Module):
    """Self-attention added residually, scaled by a learnable scalar gate.

    ``out = gamma * (softmax(f(x)^T g(x)) applied to h(x)) + x``; ``f`` and
    ``g`` project to ``max(c // 8, 1)`` channels, ``h`` keeps ``c``.
    """

    def __init__(self, channels: int, rng, max_positions: int = 32 * 32, initializer: str = "glorot"):
        reduced = max(channels // 8, 1)
        self.f = Conv2d(channels, reduced, 1, rng, spectral=False, initializer=initializer)
        # a key bias shifts a whole softmax row equally, so it would never train
        self.g = Conv2d(channels, reduced, 1, rng, spectral=False, initializer=initializer, bias=False)
        self.h = Conv2d(channels, channels, 1, rng, spectral=False, initializer=initializer)
        self.gate = AttentionGate()
        self.max_positions = max_positions

    def attention_map(self, x: Tensor) -> Tensor:
        n, c, hh, ww = x.shape
        positions = hh * ww
        if positions > self.max_positions:
            raise ValueError(
                f"self-attention over {hh}x{ww}={positions} positions exceeds the cap of {self.max_positions}"
            )
        query = self.f(x).reshape(n, -1, positions).transpose(0, 2, 1)
        key = self.g(x).reshape(n, -1, positions)
        return T.softmax_rows(T.matmul_batched(query, key))

    def forward(self, x, training=False, rng=None):
        n, c, hh, ww = x.shape
        attn = self.attention_map(x)
        value = self.h(x).reshape(n, c, hh * ww).transpose(0, 2, 1)
        o = T.matmul_batched(attn, value).transpose(0, 2, 1).reshape(n, c, hh, ww)
        return self.gate.gamma * o + x
