"""Merged run configuration: JSON file, environment default and dotted overrides."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Iterable, Optional

from .criticality import RangePolicy
from .errors import ConfigError
from .training import VARIANTS, TrainConfig

ENV_VAR = "CLINNUM_CONFIG"

# Desk-scale defaults.  TrainConfig keeps the fine-tuning protocol; a model
# trained from random weights needs a larger step, and a longer patience to
# get past its initial all-out-of-class plateau and noisy validation scores.
DEFAULTS: dict[str, Any] = {
    "corpus": {
        "note_count": 1000,
        "seed": 0,
        "abbreviation_rate": 0.15,
        "typo_rate": 0.02,
        "accent_drop_rate": 0.1,
        "max_distractors": 2,
    },
    "model": {
        "dim": 32,
        "heads": 4,
        "layers": 2,
        "dropout": 0.1,
        "max_len": 128,
        "ffn_mult": 4,
        "init_std": 0.02,
    },
    "train": {
        "learning_rate": 2e-3,
        "weight_decay": 0.01,
        "clip_norm": 1.0,
        "early_stop_patience": 10,
        "max_epochs": 100,
        "split": [0.70, 0.15, 0.15],
        "batch_size": 16,
        "seeds": [0],
        "split_seed": 0,
    },
    "variants": ["lesa-blinded"],
    "thresholds": None,
    "keywords": None,
    "range_policy": "any",
}


def train_config(cfg: dict) -> TrainConfig:
    """TrainConfig from the ``train`` section of a resolved configuration."""
    return TrainConfig(**{k: v for k, v in cfg["train"].items() if k != "split_seed"})


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> dict:
    """``train.learning_rate=1e-3`` -> nested dict; values parse as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.sub=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    cur = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return node


def resolve(path: Optional[str] = None, overrides: Iterable[str] = ()) -> dict:
    """Defaults, then the config file (argument or environment), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    path = path or os.environ.get(ENV_VAR) or None
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = _merge(cfg, json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    for item in overrides:
        cfg = _merge(cfg, parse_override(item))
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    for key in ("thresholds", "keywords"):
        if cfg[key] is not None and not Path(cfg[key]).is_file():
            raise ConfigError(f"{key} file not found: {cfg[key]}")
    try:
        RangePolicy(cfg["range_policy"])
    except ValueError:
        raise ConfigError(f"range_policy must be one of {[p.value for p in RangePolicy]}") from None
    bad = [v for v in cfg["variants"] if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from {sorted(VARIANTS)}")
    split = cfg["train"]["split"]
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"train.split must be three fractions summing to 1, got {split}")
    if cfg["train"]["early_stop_patience"] < 1:
        raise ConfigError("train.early_stop_patience must be >= 1")
    m = cfg["model"]
    if m["heads"] < 1 or m["dim"] % m["heads"]:
        raise ConfigError(f"model.dim ({m['dim']}) must be a multiple of model.heads ({m['heads']})")
