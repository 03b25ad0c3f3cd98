"""Flat ``key = value`` run configuration, layered defaults <- file <- flags."""
from __future__ import annotations

import dataclasses
import hashlib
import os
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .backbones import FAMILIES, ArchitectureSpec
from .data import IMAGE_SIZE, AugmentationPolicy, SplitConfig
from .exceptions import ConfigurationError
from .training import LOSSES, MONITORS, TrainConfig

OUTPUT_DIR_ENV = "PAVE_PCI_OUTPUT_DIR"
RESOLVED_NAME = "config.resolved"


def _default_output_dir():
    return os.environ.get(OUTPUT_DIR_ENV, "runs/latest")


@dataclass
class RunConfig:
    family: str = "resnet50_cbam"
    reduction_ratio: int = 16
    pretrained_backbone: bool = True
    image_size: int = IMAGE_SIZE
    augment: bool = True
    train_fraction: float = 0.9
    batch_size: int = 32
    max_epochs: int = 100
    initial_lr: float = 1e-4
    loss: str = "mse"
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    min_lr: float = 1e-7
    early_stop_patience: int = 10
    monitor_metric: str = "val_mae"
    weight_decay: float = 0.0
    grad_clip: float | None = None
    mape_min_denominator: float = 1.0
    freeze_batchnorm: bool = False
    seed: int = 0
    output_dir: str = dataclasses.field(default_factory=_default_output_dir)

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.monitor_metric not in MONITORS:
            raise ConfigurationError(f"monitor_metric must be one of {MONITORS}, got {self.monitor_metric!r}")
        self.architecture().validate()
        self.train_config().validate()
        return self

    def architecture(self):
        return ArchitectureSpec(family=self.family, reduction_ratio=self.reduction_ratio,
                                pretrained_backbone=self.pretrained_backbone)

    def train_config(self):
        return TrainConfig(
            max_epochs=self.max_epochs, initial_lr=self.initial_lr, loss=self.loss, batch_size=self.batch_size,
            plateau_factor=self.plateau_factor, plateau_patience=self.plateau_patience, min_lr=self.min_lr,
            early_stop_patience=self.early_stop_patience, monitor_metric=self.monitor_metric,
            seed=derive_seed(self.seed, "training"), weight_decay=self.weight_decay, grad_clip=self.grad_clip,
            mape_min_denominator=self.mape_min_denominator, freeze_batchnorm=self.freeze_batchnorm,
        )

    def split_config(self):
        return SplitConfig(self.train_fraction, derive_seed(self.seed, "split"))

    def augmentation_policy(self):
        return AugmentationPolicy(seed=derive_seed(self.seed, "augment"))

    def to_text(self):
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")
        return Path(path)


def derive_seed(root, name):
    """Named sub-seed fanned out from the single root seed."""
    digest = hashlib.sha256(f"{root}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_HINTS = None


def _field_types():
    global _HINTS
    if _HINTS is None:
        _HINTS = typing.get_type_hints(RunConfig)
    return _HINTS


def coerce(key, raw):
    """Convert a string (from a config file or flag) to the type of ``RunConfig.<key>``."""
    types = _field_types()
    if key not in types:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    hint = types[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional and text.lower() in ("none", "null", ""):
        return None
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    try:
        if base is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {base.__name__}") from exc
    return text


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        values[key] = coerce(key, value)
    return values


def resolve(config_file=None, overrides=None):
    """Defaults, then the file, then explicit overrides (``None`` values are ignored)."""
    values = {}
    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = coerce(key, value)
    return RunConfig(**values).validate()
