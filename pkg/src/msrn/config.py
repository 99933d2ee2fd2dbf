"""Run configuration: a flat JSON file with typo-safe parsing.

Unknown keys are rejected, every default is filled in, and the resolved
config (the exact values a run used) is echoed to disk so any run can be
reproduced from its output directory alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional, Tuple

from .errors import ConfigError
from .model import ModelSpec
from .train import TrainConfig

DEFAULT_LR_GRID = (3e-3, 1e-3, 3e-4, 1e-4, 3e-5)


@dataclass(frozen=True)
class RunConfig:
    cube: str
    labels: str
    sidecar: str
    output_dir: str
    split: Optional[str] = None
    patch_size: int = 13
    kernel_count: int = 24
    dropout: float = 0.3
    learning_rate: float = 3e-4
    lr_grid: Tuple[float, ...] = DEFAULT_LR_GRID
    batch_size: int = 16
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-7
    lr_patience: int = 5
    stop_patience: int = 15
    max_epochs: int = 200
    seed: int = 0
    train_fraction: float = 0.1
    val_fraction: float = 0.1
    standardize: bool = True
    deterministic: bool = True
    workers: int = 1

    def model_spec(self, bands: int, classes: int) -> ModelSpec:
        return ModelSpec(patch_size=self.patch_size, bands=bands,
                         classes=classes, kernel_count=self.kernel_count,
                         dropout_p=self.dropout)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, lr_grid=tuple(self.lr_grid),
            batch_size=self.batch_size, rmsprop_rho=self.rmsprop_rho,
            rmsprop_eps=self.rmsprop_eps, lr_patience=self.lr_patience,
            stop_patience=self.stop_patience, max_epochs=self.max_epochs,
            seed=self.seed)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["lr_grid"] = list(doc["lr_grid"])
        return doc


_REQUIRED = ("cube", "labels", "sidecar", "output_dir")
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _validate(config: RunConfig) -> None:
    def fail(fieldname, message):
        raise ConfigError(f"{fieldname}: {message}")

    for fieldname in ("cube", "labels", "sidecar"):
        path = getattr(config, fieldname)
        if not isinstance(path, str) or not path:
            fail(fieldname, "must be a nonempty path")
        if not os.path.exists(path):
            fail(fieldname, f"path does not exist: {path}")
    if config.split is not None and not os.path.exists(config.split):
        fail("split", f"path does not exist: {config.split}")
    if config.patch_size % 2 == 0 or config.patch_size < 5:
        fail("patch_size", f"must be odd and >= 5, got {config.patch_size}")
    if config.kernel_count < 1:
        fail("kernel_count", "must be >= 1")
    if not 0.0 <= config.dropout < 1.0:
        fail("dropout", f"must be in [0, 1), got {config.dropout}")
    for name in ("train_fraction", "val_fraction"):
        value = getattr(config, name)
        if not 0.0 < value < 1.0:
            fail(name, f"must be in (0, 1), got {value}")
    if config.train_fraction + config.val_fraction >= 1.0:
        fail("train_fraction", "train_fraction + val_fraction must be < 1")
    if config.workers < 1:
        fail("workers", "must be >= 1")
    try:
        config.train_config()
    except ConfigError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    values = dict(doc)
    if "lr_grid" in values:
        try:
            values["lr_grid"] = tuple(float(r) for r in values["lr_grid"])
        except (TypeError, ValueError):
            raise ConfigError("lr_grid: must be a list of numbers")
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    _validate(config)
    return config


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def write_resolved_config(config: RunConfig, path) -> None:
    """Echo the fully-defaulted config; re-parsing it yields an equal config."""
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
