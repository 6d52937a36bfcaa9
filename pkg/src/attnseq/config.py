"""Experiment configuration: nested dataclasses loaded from strict JSON."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .nn import ConfigError
from .objective import Stage


@dataclass
class ScheduleConfig:
    """Optional framewise pretraining, then sequence-training stages.

    Stage ``k`` covers sequence epochs ``stages[k-1].until_epoch + 1`` through
    ``stages[k].until_epoch`` (inclusive); epochs are numbered from 1.
    Pretraining epochs run before sequence epoch 1 and are not counted.
    """

    pretrain_epochs: int = 3
    stages: list = field(default_factory=lambda: [
        Stage(until_epoch=4, freeze_encoder_ff=True),
        Stage(until_epoch=20, gating_enabled=True, penalty_enabled=True,
              wd_output_mlp=1e-3, wd_scorer=2e-4),
    ])

    @property
    def n_epochs(self) -> int:
        return self.stages[-1].until_epoch

    def stage_index(self, epoch: int) -> int:
        for k, st in enumerate(self.stages):
            if epoch <= st.until_epoch:
                return k
        raise ConfigError(f"epoch {epoch} is past the last stage")

    def stage_for(self, epoch: int) -> Stage:
        return self.stages[self.stage_index(epoch)]

    def validate(self) -> None:
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if not self.stages:
            raise ConfigError("schedule needs at least one stage")
        prev = 0
        for st in self.stages:
            if st.until_epoch <= prev:
                raise ConfigError("stage until_epoch values must be strictly increasing and >= 1")
            if st.grad_scale <= 0 or st.wd_output_mlp < 0 or st.wd_scorer < 0:
                raise ConfigError("grad_scale must be > 0 and weight decays >= 0")
            prev = st.until_epoch


@dataclass
class OptimizerConfig:
    rho_ad: float = 0.95
    eps_ad: float = 1e-6
    rho_clip: float = 0.99
    kappa: float = 1.0

    def validate(self) -> None:
        if not (0 < self.rho_ad < 1 and 0 < self.rho_clip < 1):
            raise ConfigError("rho_ad and rho_clip must lie in (0, 1)")
        if self.eps_ad <= 0 or self.kappa < 0:
            raise ConfigError("eps_ad must be > 0 and kappa >= 0")


@dataclass
class BatchConfig:
    group_size: int = 32
    batch_size: int = 4

    def validate(self) -> None:
        if self.group_size < 1 or self.batch_size < 1:
            raise ConfigError("group_size and batch_size must be positive")


@dataclass
class PathsConfig:
    train: str = "data/train"
    dev: str = "data/dev"
    vocab: str = "data/vocab.txt"
    out: str = "run"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 1
    precision: str = "f64"

    def validate(self) -> None:
        self.model.validate()
        self.schedule.validate()
        self.optimizer.validate()
        self.batch.validate()
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = from_mapping(cls, data, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def from_mapping(cls, data, where: str):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{where}.{key}")
    return cls(**kwargs)


def _coerce(hint, value, where: str):
    if dataclasses.is_dataclass(hint):
        return from_mapping(hint, value, where)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        if where.endswith(".stages"):
            return [from_mapping(Stage, v, f"{where}[{i}]") for i, v in enumerate(value)]
        return [_coerce(int, v, f"{where}[{i}]") for i, v in enumerate(value)]
    raise ConfigError(f"{where}: unsupported field type {hint}")
