"""Loss terms: least-squares adversarial, switching pixel loss, SSIM, channel weighting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from . import tensor as T
from .tensor import Tensor

CHANNELS = ("r", "g", "b", "d")

# one row per step in the metrics CSV
METRIC_COLUMNS = (
    "epoch", "step", "adv_g", "cyc", "ide", "ssim", "total_g",
    "d_lowlevel", "d_layout", "d_content", "total_d",
)


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_ide: float = 0.5
    lambda_ssim: float = 1.0
    lambda_channel: dict[str, float] = field(default_factory=lambda: {"r": 1.0, "g": 1.0, "b": 1.0, "d": 3.0})
    epoch_sw: int = 40
    ssim_constants: tuple[float, float, float] = (0.01 ** 2, 0.03 ** 2, 0.03 ** 2 / 2)
    ssim_exponents: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.lambda_channel = dict(self.lambda_channel)
        self.ssim_constants = tuple(self.ssim_constants)
        self.ssim_exponents = tuple(self.ssim_exponents)
        if set(self.lambda_channel) != set(CHANNELS):
            raise ValueError(f"lambda_channel needs keys {CHANNELS}, got {sorted(self.lambda_channel)}")
        lambdas = [self.lambda_cyc, self.lambda_ide, self.lambda_ssim, *self.lambda_channel.values()]
        if any(v < 0 for v in lambdas):
            raise ValueError("loss weights must be non-negative")
        if len(self.ssim_constants) != 3 or any(c <= 0 for c in self.ssim_constants):
            raise ValueError(f"SSIM constants must be three positive values, got {self.ssim_constants}")


@dataclass
class LossReport:
    adv: Tensor
    cyc: Tensor
    ide: Tensor
    ssim: Tensor
    total: Tensor
    per_channel: dict[str, dict[str, float]] = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        return {"adv_g": self.adv.item(), "cyc": self.cyc.item(), "ide": self.ide.item(),
                "ssim": self.ssim.item(), "total_g": self.total.item()}


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def adv_loss_discriminator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """mean((D(real) - 1)^2) + mean(D(fake)^2)."""
    _same_shape("adv_loss_discriminator", d_real, d_fake)
    return T.square(d_real - 1.0).mean() + T.square(d_fake).mean()


def adv_loss_generator(d_fake: Tensor) -> Tensor:
    return T.square(d_fake - 1.0).mean()


def pixel_loss(xp: Tensor, yp: Tensor, x: Tensor, y: Tensor, epoch: int, epoch_sw: int) -> Tensor:
    """Mean absolute error up to and including ``epoch_sw``, mean squared error after."""
    _same_shape("pixel_loss", xp, x)
    _same_shape("pixel_loss", yp, y)
    if epoch <= epoch_sw:
        return T.abs_(xp - x).mean() + T.abs_(yp - y).mean()
    return T.square(xp - x).mean() + T.square(yp - y).mean()


def ssim(x: Tensor, y: Tensor, constants=(0.01 ** 2, 0.03 ** 2, 0.03 ** 2 / 2),
         exponents=(1.0, 1.0, 1.0)) -> Tensor:
    """Whole-image SSIM of single-channel batches ``(n, 1, h, w)``, averaged over the batch.

    Statistics are population moments over each image; the three factors
    compare means, standard deviations and the covariance.
    """
    _same_shape("ssim", x, y)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"ssim expects single-channel (n, 1, h, w) tensors, got {x.shape}")
    c1, c2, c3 = constants
    alpha, beta, gamma = exponents
    axes = (1, 2, 3)
    mu_x = x.mean(axis=axes)
    mu_y = y.mean(axis=axes)
    dx = x - mu_x.reshape(-1, 1, 1, 1)
    dy = y - mu_y.reshape(-1, 1, 1, 1)
    var_x = T.square(dx).mean(axis=axes)
    var_y = T.square(dy).mean(axis=axes)
    cov = (dx * dy).mean(axis=axes)
    sd_xy = T.sqrt(var_x * var_y)

    mean_term = (2.0 * mu_x * mu_y + c1) / (T.square(mu_x) + T.square(mu_y) + c1)
    spread_term = (2.0 * sd_xy + c2) / (var_x + var_y + c2)
    structure_term = (cov + c3) / (sd_xy + c3)
    value = T.power(mean_term, alpha) * T.power(spread_term, beta) * T.power(structure_term, gamma)
    return value.mean()


def ssim_loss(s: Tensor, t: Tensor, cyc_s: Tensor, cyc_t: Tensor, constants=(0.01 ** 2, 0.03 ** 2, 0.03 ** 2 / 2),
              exponents=(1.0, 1.0, 1.0)) -> Tensor:
    return (1.0 - ssim(s, cyc_s, constants, exponents)) + (1.0 - ssim(t, cyc_t, constants, exponents))


def channelwise(loss_fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                lambda_channel: Mapping[str, float]) -> tuple[Tensor, dict[str, float]]:
    """Apply ``loss_fn`` to each r/g/b/d slice of ``inputs`` and sum with per-channel weights.

    Returns the weighted sum and the unweighted per-channel values.
    """
    for t in inputs:
        if t.ndim != 4 or t.shape[1] != len(CHANNELS):
            raise ValueError(f"channelwise needs 4-channel RGB-D tensors, got shape {t.shape}")
    total = None
    breakdown = {}
    for i, name in enumerate(CHANNELS):
        term = loss_fn(*(T.slice_channels(t, i, i + 1) for t in inputs))
        breakdown[name] = term.item()
        weighted = term * float(lambda_channel[name])
        total = weighted if total is None else total + weighted
    return total, breakdown


def total_generator_loss(parts: Mapping[str, Tensor], weights: LossWeights,
                         per_channel: dict[str, dict[str, float]] | None = None) -> LossReport:
    """adv + lambda_cyc * cyc + lambda_ide * ide + lambda_ssim * ssim."""
    missing = [k for k in ("adv", "cyc", "ide", "ssim") if k not in parts]
    if missing:
        raise KeyError(f"total_generator_loss: missing loss parts {missing}")
    adv, cyc, ide, ss = (T.as_tensor(parts[k]) for k in ("adv", "cyc", "ide", "ssim"))
    total = adv + cyc * weights.lambda_cyc + ide * weights.lambda_ide + ss * weights.lambda_ssim
    return LossReport(adv, cyc, ide, ss, total, per_channel or {})


def total_discriminator_loss(lowlevel, layout, content):
    """Low-level head counts twice to balance the two branch heads."""
    return 2.0 * lowlevel + layout + content


def generator_adv_from_heads(heads: Sequence[Tensor]) -> Tensor:
    """Generator-side adversarial loss over the three discriminator heads, weighted 2/1/1."""
    lowlevel, layout, content = heads
    return total_discriminator_loss(adv_loss_generator(lowlevel), adv_loss_generator(layout),
                                    adv_loss_generator(content))


def discriminator_head_losses(real_heads: Sequence[Tensor], fake_heads: Sequence[Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    return tuple(adv_loss_discriminator(r, f) for r, f in zip(real_heads, fake_heads))
