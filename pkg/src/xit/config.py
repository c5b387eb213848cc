"""Run configuration: one JSON document with a section per module."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .augment import AugmentConfig
from .losses import LossConfig
from .model import EncoderConfig, SummarizerConfig
from .train import FinetuneConfig, PretrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    max_length: int | None = None


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.2

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int] = (32, 64, 64)
    kernel_sizes: tuple[int, int, int] = (8, 5, 3)
    pool_stride: int = 2
    token_dim: int = 64
    heads: int = 4
    layers: int = 4
    ffn_hidden: int = 64
    dropout: float = 0.1

    def encoder(self, in_length: int) -> EncoderConfig:
        return EncoderConfig(in_length, tuple(self.channels), tuple(self.kernel_sizes), self.pool_stride)

    def summarizer(self) -> SummarizerConfig:
        return SummarizerConfig(self.token_dim, self.heads, self.layers, self.ffn_hidden, self.dropout)


_SECTIONS = {
    "data": DataConfig,
    "augment": AugmentConfig,
    "mixup": MixupConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": PretrainConfig,
    "finetune": FinetuneConfig,
}
# the run-level seed is the single source of randomness for both phases
_RUN_LEVEL = {"train": {"seed"}, "finetune": {"seed"}}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    mixup: MixupConfig = field(default_factory=MixupConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    output_dir: str = "runs/xit"
    seed: int = 0

    @property
    def pretrain_cfg(self) -> PretrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    @property
    def finetune_cfg(self) -> FinetuneConfig:
        return dataclasses.replace(self.finetune, seed=self.seed)

    def replace(self, **sections: Any) -> "RunConfig":
        """Copy with top-level fields replaced; dict values update a section key by key."""
        updates = {}
        for key, value in sections.items():
            if isinstance(value, dict):
                value = dataclasses.replace(getattr(self, key), **value)
            updates[key] = value
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name, cls in _SECTIONS.items():
            section = dataclasses.asdict(getattr(self, name))
            for key in _RUN_LEVEL.get(name, ()):
                section.pop(key)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        out["output_dir"] = self.output_dir
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        kwargs: dict[str, Any] = {}
        for key, value in raw.items():
            if key in ("output_dir", "seed"):
                kwargs[key] = value
                continue
            if key not in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            section_cls = _SECTIONS[key]
            allowed = {f.name for f in dataclasses.fields(section_cls)} - _RUN_LEVEL.get(key, set())
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            for sub in value:
                if sub not in allowed:
                    raise ConfigError(f"unknown config key {key}.{sub}")
            try:
                kwargs[key] = section_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in value.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid config section {key!r}: {exc}") from None
        return cls(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
