"""Optimizers, learning-rate schedule and weight initialisers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    """Per-parameter slots plus hyperparameters for one optimizer instance.

    ``kind`` is ``"nadam"`` (slots ``m`` and ``v``) or ``"sgd"`` (slot
    ``velocity``).  Slots are created lazily on the first step.
    """

    kind: str
    beta1: float = 0.5
    beta2: float = 0.99
    momentum: float = 0.9
    eps: float = 1e-8
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def nadam_state(beta1: float = 0.5, beta2: float = 0.99, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("nadam", beta1=beta1, beta2=beta2, eps=eps)


def sgd_state(momentum: float = 0.9) -> OptimizerState:
    return OptimizerState("sgd", momentum=momentum)


def _collect(params: dict[str, Tensor], grads: dict[str, np.ndarray] | None) -> dict[str, np.ndarray]:
    out = {}
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        out[name] = g
    return out


def nadam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray] | None,
               state: OptimizerState, lr: float) -> None:
    """One NADAM update in place.

    m_t = b1 m + (1-b1) g,  v_t = b2 v + (1-b2) g^2
    m_hat = b1 m_t / (1 - b1^(t+1)) + (1-b1) g / (1 - b1^t)
    w -= lr * m_hat / (sqrt(v_t / (1 - b2^t)) + eps)

    ``grads`` defaults to each parameter's accumulated ``.grad``.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    gs = _collect(params, grads)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = gs[name].astype(p.dtype, copy=False)
        slot = state.slots.setdefault(name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)})
        slot["m"] = b1 * slot["m"] + (1 - b1) * g
        slot["v"] = b2 * slot["v"] + (1 - b2) * g * g
        m_hat = b1 * slot["m"] / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1 ** t)
        v_hat = slot["v"] / (1 - b2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


def sgd_momentum_step(params: dict[str, Tensor], grads: dict[str, np.ndarray] | None,
                      state: OptimizerState, lr: float) -> None:
    """v <- momentum * v + g;  w <- w - lr * v."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    gs = _collect(params, grads)
    state.step += 1
    for name, p in params.items():
        slot = state.slots.setdefault(name, {"velocity": np.zeros_like(p.data)})
        slot["velocity"] = state.momentum * slot["velocity"] + gs[name].astype(p.dtype, copy=False)
        p.data = (p.data - lr * slot["velocity"]).astype(p.dtype)


@dataclass(frozen=True)
class ScheduleSpec:
    target_lr: float
    warmup_epochs: int = 10
    total_epochs: int = 80

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError(
                f"need 0 < warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}"
            )
        if self.target_lr <= 0:
            raise ValueError(f"target_lr must be positive, got {self.target_lr}")


def lr_at(spec: ScheduleSpec, epoch: int) -> float:
    """Linear warmup to the target, then cosine decay towards zero."""
    if not 0 <= epoch < spec.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {spec.total_epochs})")
    if epoch < spec.warmup_epochs:
        return spec.target_lr * (epoch + 1) / spec.warmup_epochs
    decay = spec.total_epochs - spec.warmup_epochs
    return spec.target_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - spec.warmup_epochs) / decay))


def init_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Samples strictly inside +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fan values must be positive, got {fan_in}, {fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-bound, bound, size=shape)
    while np.any(w == -bound):
        w = np.where(w == -bound, rng.uniform(-bound, bound, size=shape), w)
    return w


def he_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)
