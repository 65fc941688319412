"""Experiment configuration: nested dataclasses, YAML loading, fingerprints.

Config files are YAML with one section per subsystem. Unknown keys are
rejected with the full dotted path. CLI overrides use ``section.key=value``
with YAML-parsed values. The effective config (all defaults filled in) is what
gets fingerprinted and written next to every output.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .attack import AttackConfig
from .data import DatasetSpec
from .errors import ConfigurationError
from .finetune import FinetuneConfig
from .model import ModelConfig
from .triggers import ANCHORS

MODES = (
    "clean_pl", "badnets_pl", "wanet_pl", "fiba_pl", "baple",
    "clean_ft", "badnets_ft", "wanet_ft", "fiba_ft",
)


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 6
    image_size: tuple[int, int, int] = (32, 32, 3)
    train_samples_per_class: int = 200
    test_samples_per_class: int = 100
    seed: int = 7
    noise_level: float = 0.8

    def train_spec(self) -> DatasetSpec:
        return DatasetSpec(self.num_classes, self.image_size,
                           self.train_samples_per_class, self.seed,
                           self.noise_level)

    def test_spec(self) -> DatasetSpec:
        return DatasetSpec(self.num_classes, self.image_size,
                           self.test_samples_per_class, self.seed,
                           self.noise_level)


@dataclass(frozen=True)
class TriggerConfig:
    patch_kind: str = "logo"  # "logo" (BAPLe default) or "noise" (BadNets style)
    patch_size: tuple[int, int] = (24, 24)
    patch_location: str = "bottom-left"
    patch_seed: int = 0
    wanet_grid: int = 4
    wanet_strength_px: float = 0.5
    wanet_seed: int = 0
    fiba_alpha: float = 0.15
    fiba_radius: float = 0.1
    fiba_seed: int = 0

    def validate(self) -> None:
        if self.patch_kind not in ("logo", "noise"):
            raise ConfigurationError("trigger.patch_kind must be 'logo' or 'noise'")
        if self.patch_location not in ANCHORS:
            raise ConfigurationError(
                f"trigger.patch_location must be one of {ANCHORS}")
        if not (0.0 < self.fiba_radius <= 0.5):
            raise ConfigurationError("trigger.fiba_radius must be in (0, 0.5]")


@dataclass(frozen=True)
class PoisonConfig:
    k_shots: int = 32
    poison_ratio: float = 0.05
    target_class: int = 0

    def validate(self) -> None:
        if self.k_shots < 1:
            raise ConfigurationError("poison.k_shots must be positive")
        if not (0.0 <= self.poison_ratio <= 1.0):
            raise ConfigurationError("poison.poison_ratio must be in [0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    exclude_target_from_ba: bool = False
    eval_batch_size: int = 256


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "baple"
    seed: int = 0
    out_root: str = "out"
    checkpoint: str | None = None  # pretrained encoder artifact directory
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    poison: PoisonConfig = field(default_factory=PoisonConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        self.trigger.validate()
        self.poison.validate()
        self.attack.validate()
        self.finetune.validate()
        self.data.train_spec().validate()
        if not (0 <= self.poison.target_class < self.data.num_classes):
            raise ConfigurationError(
                "poison.target_class out of range for data.num_classes")


_TUPLE_FIELDS = {"image_size", "conv_channels", "patch_size"}


def _from_dict(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        f = known[key]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default  # type: ignore[misc]
        if is_dataclass(default):
            kwargs[key] = _from_dict(type(default), value or {}, dotted)
        elif key in _TUPLE_FIELDS:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(payload: dict) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, payload or {}, "")
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if is_dataclass(value):
            out[f.name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def apply_overrides(payload: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are YAML-parsed."""
    out = json.loads(json.dumps(payload))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must be key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override path {dotted!r} crosses a scalar")
        node[keys[-1]] = yaml.safe_load(raw)
    return out


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    payload = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if overrides:
        payload = apply_overrides(payload, overrides)
    return config_from_dict(payload)


def fingerprint(cfg: ExperimentConfig) -> str:
    """Stable 12-hex digest of the effective config."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True),
                          encoding="utf-8")
