"""Run configuration files: defaults, validation and ``--set`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .trainer import ModelConfig, TrainConfig

DEFAULTS: dict = {
    "data": {
        # CSV file and optional split JSON; when csv is null the synth block is generated
        "csv": None,
        "split": None,
        "synth": asdict(SynthConfig()),
        "train_fraction": 0.5,
        "split_seed": 0,
        "ordered": False,
    },
    "model": asdict(ModelConfig(embed_dim=16, hidden=(), activation="relu")),
    "train": {k: v for k, v in asdict(TrainConfig()).items() if k != "eval_ks"},
    "eval": {"ks": [1, 2, 4, 8], "kmeans_seed": 0},
    "bounds": {"samples": 10000, "seed": 0, "margin": 1.0, "distance_scale": 0.5},
}


def _to_plain(obj):
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return dotted.strip().split("."), value


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    for text in overrides:
        keys, value = parse_override(text)
        nested = value
        for k in reversed(keys):
            nested = {k: nested}
        config = _merge(config, nested)
    return config


def materialize(user: dict | None = None, overrides: list[str] | None = None) -> dict:
    """Fill defaults, apply overrides and validate. The result reproduces the run."""
    config = _merge(_to_plain(DEFAULTS), user or {})
    config = apply_overrides(config, overrides or [])
    train_config(config).validate()
    model_config(config)
    synth_config(config).validate()
    return _to_plain(config)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
    return materialize(user, overrides)


def _build(cls, values: dict):
    names = {f.name for f in fields(cls)}
    try:
        obj = cls(**{k: v for k, v in values.items() if k in names})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return obj


def train_config(config: dict) -> TrainConfig:
    cfg = _build(TrainConfig, config["train"])
    cfg.eval_ks = tuple(int(k) for k in config["eval"]["ks"])
    return cfg


def model_config(config: dict) -> ModelConfig:
    cfg = _build(ModelConfig, config["model"])
    cfg.hidden = tuple(int(h) for h in cfg.hidden)
    if cfg.embed_dim < 1:
        raise ConfigError("model.embed_dim must be positive")
    return cfg


def synth_config(config: dict) -> SynthConfig:
    return _build(SynthConfig, config["data"]["synth"])
