"""Run configuration: a JSON document mapped onto nested dataclasses.

Unknown keys are rejected at every level; missing keys take defaults, which
are the published hyperparameters wherever one exists.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .losses import LossWeights
from .models import DiscriminatorConfig, GeneratorConfig
from .optim import ScheduleSpec


class ConfigError(ValueError):
    pass


@dataclass
class OptimConfig:
    beta1: float = 0.5
    beta2: float = 0.99
    eps: float = 1e-8
    momentum: float = 0.9


@dataclass
class DataConfig:
    synthetic_manifest: str | None = None
    target_manifest: str | None = None
    train_fraction: float = 0.8
    augment: bool = True
    max_shift: int | None = None  # None: 10% of the image width

    def shift_for(self, width: int) -> int:
        return max(1, width // 10) if self.max_shift is None else self.max_shift


def _schedule_g() -> ScheduleSpec:
    return ScheduleSpec(target_lr=0.0002, warmup_epochs=10, total_epochs=80)


def _schedule_d() -> ScheduleSpec:
    return ScheduleSpec(target_lr=0.0001, warmup_epochs=10, total_epochs=80)


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule_g: ScheduleSpec = field(default_factory=_schedule_g)
    schedule_d: ScheduleSpec = field(default_factory=_schedule_d)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    epochs: int = 80
    batch_size: int = 8
    seed: int = 0
    run_dir: str = "runs/default"
    checkpoint_dir: str | None = None
    metrics_path: str | None = None
    checkpoint_every: int = 5
    test_every: int = 5

    def __post_init__(self):
        if self.generator.input_size != self.discriminator.input_size:
            raise ConfigError(
                f"generator input {self.generator.input_size} != discriminator input {self.discriminator.input_size}"
            )
        for name, spec in (("schedule_g", self.schedule_g), ("schedule_d", self.schedule_d)):
            if self.epochs > spec.total_epochs:
                raise ConfigError(f"epochs={self.epochs} exceeds {name}.total_epochs={spec.total_epochs}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.checkpoint_every < 1 or self.test_every < 1:
            raise ConfigError("checkpoint_every and test_every must be >= 1")

    @property
    def checkpoints(self) -> Path:
        return Path(self.checkpoint_dir) if self.checkpoint_dir else Path(self.run_dir) / "checkpoints"

    @property
    def metrics(self) -> Path:
        return Path(self.metrics_path) if self.metrics_path else Path(self.run_dir) / "metrics.csv"

    def to_dict(self) -> dict[str, Any]:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data, "config")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


_NESTED = {
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "loss": LossWeights,
    "schedule_g": ScheduleSpec,
    "schedule_d": ScheduleSpec,
    "optim": OptimConfig,
    "data": DataConfig,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        if cls is RunConfig and key in _NESTED:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a JSON config; ``overrides`` maps dotted keys (e.g. ``"loss.epoch_sw"``) to values."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return RunConfig.from_dict(data)


def save_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
