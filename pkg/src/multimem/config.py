"""Run configuration: dataclasses, defaults and JSON (de)serialization.

The JSON layout mirrors the dataclass tree; unknown keys are rejected so a
typo in a config file fails loudly at load time. The ``lambda`` JSON key
maps to the ``lam`` attribute (Python keyword clash).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .core_math import Hyperparams
from .errors import InvalidConfigError
from .synth import SynthConfig


@dataclass
class Schedule:
    """Epoch-level knobs. Epochs are 1-based; the write blend is
    ``rho(e) = min(rho_max, rho_slope * e)`` and the learning rate is divided
    by ``1 / lr_decay_factor`` after ``lr_decay_epoch``."""

    total_epochs: int = 30
    domain_start_epoch: int = 5
    s_refresh_period: int = 2
    rho_slope: float = 0.02
    rho_max: float = 0.6
    lr_decay_epoch: int = 20
    lr_decay_factor: float = 0.1

    def __post_init__(self) -> None:
        if self.total_epochs < 1:
            raise InvalidConfigError("total_epochs must be positive")
        if self.domain_start_epoch < 0:
            raise InvalidConfigError("domain_start_epoch must be >= 0")
        if self.s_refresh_period < 1:
            raise InvalidConfigError("s_refresh_period must be positive")
        if self.rho_slope < 0.0:
            raise InvalidConfigError("rho_slope must be >= 0")
        if not 0.0 <= self.rho_max <= 1.0:
            raise InvalidConfigError("rho_max must be in [0, 1]")
        if self.lr_decay_epoch < 1:
            raise InvalidConfigError("lr_decay_epoch must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise InvalidConfigError("lr_decay_factor must be in (0, 1)")

    def rho(self, epoch: int) -> float:
        return min(self.rho_max, self.rho_slope * epoch)

    def learning_rate(self, base: float, epoch: int) -> float:
        return base * self.lr_decay_factor if epoch > self.lr_decay_epoch else base

    def is_refresh_epoch(self, epoch: int) -> bool:
        return epoch >= self.domain_start_epoch and epoch % self.s_refresh_period == 0


@dataclass
class EncoderConfig:
    # wide enough that a ReLU output row going all-zero is vanishingly rare
    embed_dim: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise InvalidConfigError("embed_dim must be positive")
        if self.learning_rate <= 0.0:
            raise InvalidConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise InvalidConfigError("weight_decay must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise InvalidConfigError("batch_size must be even and >= 2")


@dataclass
class ReciprocalConfig:
    k1: int = 20
    k2: int = 6
    lambda_r: float = 0.3

    def __post_init__(self) -> None:
        if self.k1 < 1 or self.k2 < 1:
            raise InvalidConfigError("k1 and k2 must be positive")
        if not 0.0 <= self.lambda_r <= 1.0:
            raise InvalidConfigError("lambda_r must be in [0, 1]")


@dataclass
class ClusteringConfig:
    eps: float = 0.3
    min_cluster_size: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < 1.0:
            raise InvalidConfigError("eps must be in (0, 1)")
        if self.min_cluster_size < 1:
            raise InvalidConfigError("min_cluster_size must be positive")


@dataclass
class TrainConfig:
    hyper: Hyperparams = field(default_factory=Hyperparams)
    schedule: Schedule = field(default_factory=Schedule)
    synth: SynthConfig = field(default_factory=SynthConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    reciprocal: ReciprocalConfig = field(default_factory=ReciprocalConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    seed: int = 0


_SECTIONS = {
    "hyper": Hyperparams,
    "schedule": Schedule,
    "synth": SynthConfig,
    "encoder": EncoderConfig,
    "reciprocal": ReciprocalConfig,
    "clustering": ClusteringConfig,
}

_JSON_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_JSON = {v: k for k, v in _JSON_TO_ATTR.items()}


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        attr = _JSON_TO_ATTR.get(key, key)
        if attr not in known:
            raise InvalidConfigError(f"unknown key '{key}' in section '{section}'")
        kwargs[attr] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"bad value in section '{section}': {exc}") from exc


def from_dict(data: dict) -> TrainConfig:
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            if not isinstance(value, int):
                raise InvalidConfigError(f"seed must be an integer, got {value!r}")
            kwargs["seed"] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidConfigError(f"section '{key}' must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            raise InvalidConfigError(f"unknown top-level key '{key}'")
    return TrainConfig(**kwargs)


def to_dict(config: TrainConfig) -> dict:
    out: dict = {"seed": config.seed}
    for section, cls in _SECTIONS.items():
        block = {}
        for f in dataclasses.fields(cls):
            block[_ATTR_TO_JSON.get(f.name, f.name)] = getattr(
                getattr(config, section), f.name
            )
        out[section] = block
    return out


def load(path: str) -> TrainConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigError("config root must be a JSON object")
    return from_dict(data)


def save(config: TrainConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(config), fh, indent=2)
        fh.write("\n")
