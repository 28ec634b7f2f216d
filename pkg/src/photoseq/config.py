"""Toolkit configuration: defaults, YAML loading, strict validation.

The config file is a nested mapping with one section per subsystem. Unknown
sections or keys are rejected so typos fail loudly; command-line flags
override file values, and the merged result is echoed into output manifests.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .dataset import BuilderConfig
from .errors import ConfigError
from .network import NetworkConfig
from .noise import NoiseParams
from .training import LossWeights, TrainSchedule

# Placeholder gain calibration used until a camera is actually calibrated;
# a realistic unity-gain profile in [0,1] units.
DEFAULT_NOISE = NoiseParams(alpha=4e-4, beta=1e-4, gain_label="default")


@dataclass(frozen=True)
class SequencerSettings:
    levels: int = 2
    n_frames: int | None = None

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.n_frames is not None and self.n_frames != 2**self.levels - 1:
            raise ValueError(f"n_frames must be 2**levels - 1, got {self.n_frames}")


@dataclass(frozen=True)
class EvaluationSettings:
    n: int = 11
    n_list: tuple[int, ...] = (9, 11, 15, 19)
    levels: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n % 2 == 0 or self.n < 3:
            raise ValueError("evaluation n must be odd >= 3")
        if any(n % 2 == 0 or n < 3 for n in self.n_list):
            raise ValueError("evaluation n_list entries must be odd >= 3")


@dataclass(frozen=True)
class ToolkitConfig:
    builder: BuilderConfig = field(default_factory=BuilderConfig)
    noise: NoiseParams = field(default_factory=lambda: DEFAULT_NOISE)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    sequencer: SequencerSettings = field(default_factory=SequencerSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_TUPLE_OF_PAIRS = {"variance_to_n"}
_TUPLE_FIELDS = {"head_channels", "trunk_channels", "n_list"}


def _coerce(name: str, value):
    if name in _TUPLE_OF_PAIRS:
        try:
            return tuple((float(c), int(n)) for c, n in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"'{name}' must be a list of [cutoff, N] pairs: {exc}") from exc
    if name in _TUPLE_FIELDS:
        return tuple(value)
    return value


def _build_section(cls, section: str, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{section}': {sorted(unknown)} (known: {sorted(known)})")
    try:
        return cls(**{k: _coerce(k, v) for k, v in data.items()})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid value in section '{section}': {exc}") from exc


_SECTIONS = {
    "builder": BuilderConfig,
    "noise": NoiseParams,
    "network": NetworkConfig,
    "loss": LossWeights,
    "schedule": TrainSchedule,
    "sequencer": SequencerSettings,
    "evaluation": EvaluationSettings,
}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ToolkitConfig:
    """Build the effective config: defaults <- YAML file <- overrides.

    overrides is a nested {section: {key: value}} mapping (CLI flags land
    here). Unknown sections/keys anywhere raise ConfigError.
    """
    merged: dict[str, dict] = {name: {} for name in _SECTIONS}
    for layer_name, layer in (("config file", _read_yaml(path)), ("overrides", overrides or {})):
        for section, values in layer.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section '{section}' in {layer_name} (known: {sorted(_SECTIONS)})")
            if not isinstance(values, dict):
                raise ConfigError(f"section '{section}' must be a mapping, got {type(values).__name__}")
            merged[section].update(values)
    return ToolkitConfig(**{name: _build_section(cls, name, merged[name]) for name, cls in _SECTIONS.items()})


def _read_yaml(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping at the top level")
    return data
