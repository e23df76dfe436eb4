"""Run configuration: YAML file with one section per stage; unknown keys fail fast."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import yaml

from ..integrator import IntegratorConfig
from ..management import ChangeConfig
from ..tracking import TrackingConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvaluationConfig:
    coverage_threshold: float = 0.05
    eval_interval: int = 10
    coverage_points: int = 100_000

    def __post_init__(self):
        if self.coverage_threshold <= 0 or self.eval_interval < 1 or self.coverage_points < 1:
            raise ValueError("evaluation parameters must be positive")


@dataclass
class MapperConfig:
    index_cell_size: float = 1.0
    belonging_gate: bool = True
    prune: bool = True
    free_space: bool = True
    free_space_class: int = 0

    def __post_init__(self):
        if self.index_cell_size <= 0:
            raise ValueError("index_cell_size must be positive")


@dataclass
class RunConfig:
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    change: ChangeConfig = field(default_factory=ChangeConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    mapper: MapperConfig = field(default_factory=MapperConfig)
    dataset: Optional[str] = None
    output: Optional[str] = None
    seed: int = 0
    runs: Optional[list] = None

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = {
    "tracking": TrackingConfig,
    "integrator": IntegratorConfig,
    "change": ChangeConfig,
    "evaluation": EvaluationConfig,
    "mapper": MapperConfig,
}
_SCALARS = {"dataset", "output", "seed", "runs"}


def _build(cls, raw, section: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(raw: Optional[Dict[str, Any]]) -> RunConfig:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - set(_SECTIONS) - _SCALARS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    kwargs = {name: _build(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    for key in _SCALARS:
        if key in raw:
            kwargs[key] = raw[key]
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)
