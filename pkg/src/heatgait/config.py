"""One JSON config file with a section per module.

Precedence is command-line flags over the file over the dataclass defaults.
Unknown sections or keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from heatgait.augment import AugmentConfig
from heatgait.errors import ConfigError, ConfigNotFound
from heatgait.evaluation import EvalConfig
from heatgait.model import ModelConfig
from heatgait.train import DataConfig, TrainConfig

SCHEMA_VERSION = 1

SECTIONS = {
    "data": DataConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class GlobalConfig:
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def override(self, section: str, **values) -> "GlobalConfig":
        """Return a copy with ``values`` set in ``section``; ``None`` values are skipped."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        return replace(self, **{section: _build(section, {**asdict(current), **values})})


def _build(section: str, values: dict):
    cls = SECTIONS[section]
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


def config_from_dict(raw: dict) -> GlobalConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version!r} not supported (expected {SCHEMA_VERSION})")
    unknown = sorted(set(raw) - set(SECTIONS) - {"schema_version"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {}
    for name in SECTIONS:
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        parts[name] = _build(name, section)
    return GlobalConfig(**parts)


def load_config(path) -> GlobalConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(raw)
