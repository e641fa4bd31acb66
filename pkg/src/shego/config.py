"""YAML run configuration: nested sections mirroring the library's config dataclasses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .backbone import PretrainConfig
from .encoder import GraphEncoderConfig
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str | None = None
    synthetic: dict | None = None
    spec_file: str | None = None
    history_budget: int = 256
    num_sentinels: int = 16


@dataclass
class BackboneSection:
    d_model: int = 64
    num_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    d_ff: int = 128
    max_positions: int = 256
    checkpoint: str | None = None


@dataclass
class SweepConfig:
    propagation: list[str] = field(default_factory=lambda: ["gcn", "gat"])
    num_levels: list[int] = field(default_factory=lambda: [1, 2, 3])
    hidden_dim: list[int] = field(default_factory=lambda: [256])


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    pretrain: PretrainConfig = field(default_factory=lambda: PretrainConfig(steps=1500))
    encoder: GraphEncoderConfig = field(default_factory=lambda: GraphEncoderConfig(hidden_dim=64))
    model: ModelConfig = field(default_factory=lambda: ModelConfig(num_prompts=10))
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


# Desk-scale overrides of the library defaults (which follow the full-size setup).
TOY_DEFAULTS = {
    "encoder": {"hidden_dim": 64},
    "model": {"num_prompts": 10},
    "pretrain": {"steps": 1500},
}

_SECTIONS = {
    "data": DataConfig,
    "backbone": BackboneSection,
    "pretrain": PretrainConfig,
    "encoder": GraphEncoderConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "sweep": SweepConfig,
}


def config_from_dict(raw: dict | None, base_dir=".", where: str = "<config>") -> RunConfig:
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{where}: top level must be a mapping")
    raw = dict(raw or {})
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"{where}: unknown section(s) {', '.join(unknown)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"{where}: seed must be an integer")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name)
        if section is not None and not isinstance(section, dict):
            raise ConfigError(f"{where}:{name}: expected a mapping, got {type(section).__name__}")
        merged = {**TOY_DEFAULTS.get(name, {}), **(section or {})}
        parts[name] = _build(cls, merged, f"{where}:{name}")
    if "seed" not in (raw.get("train") or {}):
        parts["train"].seed = seed
    return RunConfig(seed=seed, base_dir=str(base_dir), **parts)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, base_dir=path.parent, where=str(path))


def set_seed(cfg: RunConfig, seed: int) -> RunConfig:
    cfg.seed = seed
    cfg.train.seed = seed
    return cfg


def snapshot(obj) -> Any:
    return asdict(obj) if is_dataclass(obj) else obj
