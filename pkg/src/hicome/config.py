"""Experiment configuration: one YAML file with ``model``, ``train``,
``batching`` and ``loss`` sections. Keys mirror the dataclass fields;
unknown keys are rejected.

Example::

    model:
      resolution: 64
      consensus_dim: 128
    train:
      epochs: 30
      lr_initial: 0.002
      lr_drop_epoch: 25
    batching:
      batch_size: 8
      padding_mode: fixed
      n_negatives: 2
      augmentations: [hflip, color, rotate]
    loss:
      lambda_bce: 30
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .batching import BatchingConfig
from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "batching": BatchingConfig, "loss": LossConfig}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    batching: BatchingConfig = field(default_factory=BatchingConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in SECTIONS}

    @classmethod
    def from_dict(cls, data: dict | None) -> "Config":
        data = data or {}
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, klass in SECTIONS.items():
            section = dict(data.get(name) or {})
            valid = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - valid
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            if klass is ModelConfig:
                parts[name] = ModelConfig.from_dict(section)
            else:
                parts[name] = klass(**section)
        return cls(**parts)

    def override(self, section: str, **values) -> "Config":
        """Copy with ``values`` replaced in ``section`` (None values ignored)."""
        data = self.to_dict()
        data[section].update({k: v for k, v in values.items() if v is not None})
        return Config.from_dict(data)


def load_config(path) -> Config:
    with open(path) as fh:
        return Config.from_dict(yaml.safe_load(fh))


def dump_config(cfg: Config, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def toy_config() -> Config:
    """Desk-scale defaults used by the synthetic experiments."""
    return Config.from_dict(yaml.safe_load(
        (Path(__file__).parent / "configs" / "toy.yaml").read_text()))
