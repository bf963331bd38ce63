"""Layered run configuration: defaults < INI file < command-line flags.

The config file is plain ``key = value`` text under [model], [train],
[generator] and [features] sections. Whatever a command resolves is
echoed as ``resolved.ini`` into its output directory so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import replace
from typing import Any, Optional

from .datagen import GeneratorConfig
from .errors import InputError
from .model import FeatureFlags, ModelConfig
from .training import TrainConfig

DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {
        "preset": "toy",
        "d": None,
        "heads": None,
        "layers_text": None,
        "layers_visual": None,
        "layers_fusion": None,
        "ffn_mult": None,
        "crop_size": None,
        "patch_size": None,
        "n_max": 96,
        "m_max": 10,
    },
    "train": {
        "lr": 1e-3,
        "batch_size": 32,
        "dropout": 0.5,
        "weight_decay": 0.01,
        "epochs": 20,
        "seed": 0,
    },
    "generator": {
        "seed": 0,
        "image_size": 64,
        "objects_max": 10,
        "zipf_exponent": 1.6,
        "train_size": 2000,
        "dev_size": 250,
        "test_size": 400,
        "unit": "facts",
    },
    "features": {
        "position": True,
        "attribute": True,
        "depth": True,
    },
}

_PRESETS = {
    "desk": ModelConfig.desk,
    "toy": ModelConfig.toy,
    "micro": ModelConfig.micro,
}


def _coerce(section: str, key: str, raw: Any) -> Any:
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise InputError(f"unknown config key [{section}] {key}")
    default = DEFAULTS[section][key]
    if raw is None or not isinstance(raw, str):
        return raw
    text = raw.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise InputError(f"[{section}] {key} = {raw!r} is not a boolean")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if default is None:  # optional integer model override
        return int(text)
    return text


def load_config_file(path: str) -> dict[str, dict[str, Any]]:
    if not os.path.isfile(path):
        raise InputError(f"no config file at {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    out: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise InputError(f"unknown config section [{section}]")
        out[section] = {
            key: _coerce(section, key, value)
            for key, value in parser.items(section)
        }
    return out


def resolve(
    config_path: Optional[str] = None,
    overrides: Optional[dict[tuple[str, str], Any]] = None,
) -> dict[str, dict[str, Any]]:
    resolved = {s: dict(values) for s, values in DEFAULTS.items()}
    if config_path:
        for section, values in load_config_file(config_path).items():
            resolved[section].update(values)
    for (section, key), value in (overrides or {}).items():
        if value is None:
            continue
        resolved[section][key] = _coerce(section, key, value)
    return resolved


def write_resolved(out_dir: str, resolved: dict[str, dict[str, Any]]):
    os.makedirs(out_dir, exist_ok=True)
    parser = configparser.ConfigParser()
    for section, values in resolved.items():
        parser[section] = {
            k: "" if v is None else str(v) for k, v in values.items()
        }
    with open(os.path.join(out_dir, "resolved.ini"), "w", encoding="utf-8") as fh:
        parser.write(fh)


def build_features(resolved: dict) -> FeatureFlags:
    f = resolved["features"]
    return FeatureFlags(position=f["position"], attribute=f["attribute"],
                        depth=f["depth"])


def build_model_config(resolved: dict, vocab_size: int) -> ModelConfig:
    m = resolved["model"]
    preset = m["preset"]
    if preset not in _PRESETS:
        raise InputError(f"unknown model preset {preset!r}")
    cfg = _PRESETS[preset](vocab_size=vocab_size)
    explicit = {
        key: m[key]
        for key in ("d", "heads", "layers_text", "layers_visual",
                    "layers_fusion", "ffn_mult", "crop_size", "patch_size")
        if m[key] is not None
    }
    explicit["n_max"] = m["n_max"]
    explicit["m_max"] = m["m_max"]
    cfg = replace(cfg, **explicit, features=build_features(resolved))
    return cfg


def build_train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    return TrainConfig(
        lr=t["lr"],
        batch_size=t["batch_size"],
        dropout=t["dropout"],
        weight_decay=t["weight_decay"],
        epochs=t["epochs"],
        seed=t["seed"],
        features=build_features(resolved),
    )


def build_generator_config(resolved: dict) -> GeneratorConfig:
    g = resolved["generator"]
    if g["objects_max"] > 10:
        raise InputError(f"objects per image capped at 10, got {g['objects_max']}")
    return GeneratorConfig(
        image_size=g["image_size"],
        m_max=g["objects_max"],
        zipf_exponent=g["zipf_exponent"],
    )
