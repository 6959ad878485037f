"""Run configuration: TOML parsing, presets, validation, and echoing.

A run is described by one TOML file with sections ``[kernel]``, ``[loss]``,
``[train]``, ``[data]``, and ``[experiment]``. Unknown sections or keys are
rejected. Values resolve with precedence: command-line flags over file keys
over the named ``[train]`` preset. Every command echoes its fully resolved
configuration into the run directory so outputs are reproducible from the
echo alone.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

__all__ = ["RunConfig", "load_config", "dump_config", "DATA_DIR_ENV", "TRAIN_PRESETS"]

DATA_DIR_ENV = "CONDCL_DATA_DIR"

# published hyper-parameter sets kept verbatim; "desk" is this package's
# scaled-down default for laptop-sized runs
TRAIN_PRESETS: dict[str, dict[str, Any]] = {
    "desk": {
        "batch_size": 256,
        "epochs": 10,
        "learning_rate": 1e-3,
        "weight_decay": 5e-5,
        "optimizer": "adam",
        "embed_dim": 32,
        "hidden_dims": [256, 128],
    },
    "cifar-paper": {
        "batch_size": 1024,
        "learning_rate": 1e-3,
        "weight_decay": 5e-5,
        "optimizer": "adam",
        "embed_dim": 128,
    },
    "mri-paper": {
        "batch_size": 64,
        "epochs": 50,
        "learning_rate": 1e-4,
        "optimizer": "adam",
        "lr_decay_factor": 0.9,
        "lr_decay_every": 10,
    },
}

_BOOL, _INT, _FLOAT, _STR = "bool", "int", "float", "str"
_UINT, _UINT_LIST = "uint", "uint_list"
_INT_LIST, _FLOAT_LIST, _STR_LIST, _PAIR_LIST = "int_list", "float_list", "str_list", "pair_list"

_SCHEMA: dict[str, dict[str, str]] = {
    "kernel": {"family": _STR, "sigma": _FLOAT},
    "loss": {"tau": _FLOAT, "lambda": _FLOAT, "epsilon": _FLOAT},
    "train": {
        "preset": _STR,
        "batch_size": _INT,
        "epochs": _INT,
        "learning_rate": _FLOAT,
        "weight_decay": _FLOAT,
        "optimizer": _STR,
        "momentum": _FLOAT,
        "loss_kind": _STR,
        "seed": _UINT,
        "lr_decay_factor": _FLOAT,
        "lr_decay_every": _INT,
        "hidden_dims": _INT_LIST,
        "embed_dim": _INT,
        "augment_noise": _FLOAT,
        "augment_mask": _FLOAT,
        "augment_crop": _FLOAT,
        "augment_flip": _BOOL,
    },
    "data": {
        "kind": _STR,
        "data_dir": _STR,
        "train_files": _STR_LIST,
        "test_files": _STR_LIST,
        "side": _INT,
        "n_train": _INT,
        "n_test": _INT,
        "classes": _INT,
        "signal_dim": _INT,
        "nuisance_dim": _INT,
        "kappa": _FLOAT,
        "meta_jitter": _FLOAT,
        "data_seed": _UINT,
    },
    "experiment": {
        "seed": _UINT,
        "seeds": _UINT_LIST,
        "sizes": _PAIR_LIST,
        "threshold": _FLOAT,
        "step": _FLOAT,
        "batches": _INT,
        "batch_dims": _PAIR_LIST,
        "taus": _FLOAT_LIST,
        "batch_sizes": _INT_LIST,
        "reps": _INT,
        "n_oracle": _INT,
        "encoder": _STR,
        "checkpoint": _STR,
        "probe_epochs": _INT,
        "probe_lr": _FLOAT,
        "variants": _STR_LIST,
        "train_seeds": _UINT_LIST,
        "lambdas": _FLOAT_LIST,
        "eval_every": _INT,
        "knn_k": _INT,
    },
}


def _type_ok(kind: str, value) -> bool:
    if kind == _BOOL:
        return isinstance(value, bool)
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _UINT:
        return _type_ok(_INT, value) and 0 <= value < 2**64
    if kind == _UINT_LIST:
        return isinstance(value, list) and all(_type_ok(_UINT, v) for v in value)
    if kind == _FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    if kind == _INT_LIST:
        return isinstance(value, list) and all(_type_ok(_INT, v) for v in value)
    if kind == _FLOAT_LIST:
        return isinstance(value, list) and all(_type_ok(_FLOAT, v) for v in value)
    if kind == _STR_LIST:
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    if kind == _PAIR_LIST:
        return isinstance(value, list) and all(
            isinstance(v, list) and len(v) == 2 and all(_type_ok(_INT, x) for x in v) for v in value
        )
    raise AssertionError(kind)


@dataclass
class RunConfig:
    """Validated, fully merged configuration sections."""

    kernel: dict[str, Any] = field(default_factory=dict)
    loss: dict[str, Any] = field(default_factory=dict)
    train: dict[str, Any] = field(default_factory=dict)
    data: dict[str, Any] = field(default_factory=dict)
    experiment: dict[str, Any] = field(default_factory=dict)

    def section(self, name: str) -> dict[str, Any]:
        return getattr(self, name)

    def get(self, section: str, key: str, default=None):
        return self.section(section).get(key, default)

    def require(self, section: str, key: str):
        try:
            return self.section(section)[key]
        except KeyError:
            raise ConfigError(f"missing required key [{section}] {key}") from None

    def data_dir(self) -> str:
        return self.get("data", "data_dir") or os.environ.get(DATA_DIR_ENV, ".")


def _validate(raw: dict[str, Any]) -> None:
    for section, entries in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(entries, dict):
            raise ConfigError(f"section [{section}] must be a table")
        for key, value in entries.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            kind = _SCHEMA[section][key]
            if not _type_ok(kind, value):
                raise ConfigError(f"key [{section}] {key} must be of type {kind}, got {value!r}")


def load_config(path, overrides: dict[str, dict[str, Any]] | None = None) -> RunConfig:
    """Parse and validate a TOML config; apply preset then flag overrides."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    _validate(raw)

    merged = {name: dict(raw.get(name, {})) for name in _SCHEMA}
    preset_name = merged["train"].get("preset", "desk")
    if preset_name not in TRAIN_PRESETS:
        raise ConfigError(f"unknown train preset {preset_name!r}; expected one of {sorted(TRAIN_PRESETS)}")
    preset = dict(TRAIN_PRESETS[preset_name])
    preset.update(merged["train"])
    preset["preset"] = preset_name
    merged["train"] = preset

    if overrides:
        for section, entries in overrides.items():
            for key, value in entries.items():
                if value is not None:
                    merged[section][key] = value
    _validate(merged)

    sigma_needed = merged["kernel"].get("family") in ("rbf", "product")
    if sigma_needed and "sigma" not in merged["kernel"]:
        raise ConfigError("[kernel] sigma is required for the rbf and product families")
    return RunConfig(**merged)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot echo value {v!r}")


def dump_config(cfg: RunConfig) -> str:
    """Deterministic TOML echo: sorted sections and keys."""
    lines = []
    for section in sorted(_SCHEMA):
        entries = cfg.section(section)
        if not entries:
            continue
        lines.append(f"[{section}]")
        for key in sorted(entries):
            lines.append(f"{key} = {_toml_value(entries[key])}")
        lines.append("")
    return "\n".join(lines)
