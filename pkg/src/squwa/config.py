"""JSON run configuration: packaged defaults, user overrides and seed resolution.

A user file only needs the keys it changes; it is deep-merged onto
``defaults.json``.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import copy
import json
import os
from importlib import resources
from pathlib import Path
from typing import Optional

from squwa.errors import ConfigError

SCHEMA_VERSION = 1
SEED_ENV = "SQUWA_SEED"


def defaults() -> dict:
    text = resources.files("squwa").joinpath("defaults.json").read_text()
    return json.loads(text)


def merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive merge; keys absent from ``base`` raise ConfigError.

    Free-form mappings (corruption kind weights) replace wholesale.
    """
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "corruption_kind_weights":
            out[key] = merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> dict:
    cfg = defaults()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version {version}, this build reads {SCHEMA_VERSION}")
        cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def resolve_seed(cli_seed: Optional[int], cfg: Optional[dict] = None) -> int:
    """``--seed`` beats ``$SQUWA_SEED`` beats the config file."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from e
    return int((cfg or defaults()).get("seed", 0))


def synth_config(cfg: dict, seed: int):
    from squwa.synth import SynthConfig

    return SynthConfig.from_dict({**cfg["synth"], "seed": seed})


def sq_configs(cfg: dict, seed: int):
    from squwa.sq_model import SQModelConfig, SQTrainConfig

    return SQModelConfig(**cfg["sq_model"]), SQTrainConfig(**cfg["sq_train"], seed=seed)


def model_config(cfg: dict):
    from squwa.variants import ModelConfig

    return ModelConfig(**cfg["model"])


def train_config(cfg: dict, seed: int, loss: Optional[str] = None):
    from squwa.losses import LossConfig
    from squwa.trainer import TrainConfig

    t = dict(cfg["train"])
    lc = dict(t.pop("loss"))
    if loss is not None:
        lc["name"] = loss
    return TrainConfig(**t, seed=seed, loss=LossConfig(**lc))
