"""Pipeline configuration: schema, YAML IO, validation, hashing.

A config file is a nested key/value YAML document with one section per
component. Every value is validated on load; violations are reported with
the full field path (for example ``generator.n_branches``). Each run
snapshots its resolved config next to its outputs for provenance.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

import yaml

from viewfill.encoder import EncoderConfig
from viewfill.errors import ConfigError
from viewfill.generator import GeneratorConfig
from viewfill.refiner import RefinerConfig

SHAPE_KINDS = ("sphere", "box", "cylinder", "torus")


@dataclass(frozen=True)
class DataConfig:
    """Synthetic dataset layout and sampling parameters."""

    image_size: int = 32
    n_points: int = 512
    categories: tuple = SHAPE_KINDS
    train_per_category: int = 16
    val_per_category: int = 4
    test_per_category: int = 4
    jitter: float = 1e-3

    def __post_init__(self):
        if self.image_size < 4:
            raise ConfigError("data.image_size: must be at least 4")
        if self.n_points < 1:
            raise ConfigError("data.n_points: must be positive")
        if not self.categories:
            raise ConfigError("data.categories: at least one category required")
        for cat in self.categories:
            if cat not in SHAPE_KINDS:
                raise ConfigError(
                    f"data.categories: unknown shape {cat!r}; "
                    f"expected one of {', '.join(SHAPE_KINDS)}"
                )
        for name in ("train_per_category", "val_per_category", "test_per_category"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name}: must be positive")
        if not 0 <= self.jitter <= 0.001:
            raise ConfigError("data.jitter: must lie in [0, 1e-3]")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization loop parameters."""

    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 1.0
    alpha_start: float = 0.7
    alpha_end: float = 0.1
    tau: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs: must be positive")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size: must be positive")
        if self.lr <= 0:
            raise ConfigError("train.lr: must be positive")
        if self.grad_clip <= 0:
            raise ConfigError("train.grad_clip: must be positive")
        if self.alpha_start < 0 or self.alpha_end < 0:
            raise ConfigError("train.alpha_start/alpha_end: must be nonnegative")
        if self.tau <= 0:
            raise ConfigError("train.tau: must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    """Complete run configuration."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        # cross-field: image size must survive the encoder's downsampling
        self.encoder.grid_shape(self.data.image_size, self.data.image_size)
        if self.generator.keep > self.data.n_points:
            raise ConfigError(
                f"generator.keep: {self.generator.keep} exceeds "
                f"data.n_points {self.data.n_points}"
            )

    @property
    def n_coarse(self) -> int:
        return self.generator.n_generated + self.generator.keep


_SECTIONS = {
    "encoder": EncoderConfig,
    "generator": GeneratorConfig,
    "refiner": RefinerConfig,
    "data": DataConfig,
    "train": TrainConfig,
}


def _coerce(value, target_type, path):
    if target_type is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def _build_section(cls, mapping, section):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{section}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        ftype = known[key].type
        base = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}
        target = base.get(ftype if isinstance(ftype, str) else getattr(ftype, "__name__", ""), None)
        kwargs[key] = _coerce(value, target, f"{section}.{key}")
    return cls(**kwargs)


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build and validate a PipelineConfig from a nested dict."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected a mapping")
    kwargs = {}
    for key, value in raw.items():
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section")
        kwargs[key] = _build_section(_SECTIONS[key], value, key)
    return PipelineConfig(**kwargs)


def config_to_dict(config: PipelineConfig) -> dict:
    """Plain nested dict (JSON/YAML-safe) of a config."""
    out = dataclasses.asdict(config)

    def clean(obj):
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        return obj

    return clean(out)


def load_config(path) -> PipelineConfig:
    """Load and validate a YAML config file."""
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(raw)


def save_config(path, config: PipelineConfig) -> None:
    """Write the resolved config as YAML (run provenance snapshot)."""
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(config), f, sort_keys=True)


def config_hash(config: PipelineConfig) -> str:
    """Stable hash of the resolved config (canonical JSON, sha256)."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
