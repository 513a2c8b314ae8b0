"""Experiment configuration: one JSON document, strict keys, full defaults.

Every field has a default, so ``{}`` is a valid config. Unknown keys and
type mismatches are rejected with the offending dotted path. The resolved
document is echoed into each run directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "config_from_dict"]

PROBLEMS = (
    "test1_sgd_clean",
    "test1_sgld_clean",
    "test1_sgld_noisy",
    "test2",
    "convergence",
    "regularity",
    "custom",
)


class ConfigError(ValueError):
    """Bad configuration document; message carries the dotted key path."""


# kind tags: float / int / str / bool / float_or_null / int_or_null /
# list_float / list_int / choice:<a|b|..> / dict (nested schema)
_SCHEMA: dict = {
    "problem": "choice:" + "|".join(PROBLEMS),
    "grid": {"a": "float", "b": "float", "M": "int"},
    "solve": {"T": "float", "n_steps": "int"},
    "epsilon": "float",
    "psi0": {"delta": "float", "x0": "float", "p0": "float"},
    "sensors": "int",
    "sigma": "float",
    "quad_n": "int",
    "z": "float",
    "m_eval": "int_or_null",
    "seed": "int",
    "output_dir": "str",
    "test_z": "list_float",
    "train": {
        "optimizer": "choice:sgd|sgld|psgld",
        "eta0": "float",
        "decay": "float",
        "tau": "float",
        "lam_reg": "float",
        "lam_pre": "float",
        "omega": "float",
        "prior_std": "float",
        "batch_size": "int",
        "epochs": "int",
        "burn_in": "int",
        "thin": "int",
        "likelihood_std": "float_or_null",
        "weights": "list_float",
        "mlp_widths": "list_int",
        "branch_hidden": "list_int",
        "trunk_hidden": "list_int",
        "q": "int",
    },
    "convergence": {
        "n_steps_list": "list_int",
        "refine": "int",
        "case": "choice:gaussian_harmonic|plane_wave",
    },
    "regularity": {
        "eps_list": "list_float",
        "delta_z": "float",
        "delta": "float",
        "x0": "float",
        "T": "float",
        "n_steps": "int",
    },
}

_DEFAULTS: dict = {
    "problem": "test1_sgd_clean",
    "grid": {"a": -math.pi / 2, "b": math.pi / 2, "M": 1000},
    "solve": {"T": 0.6, "n_steps": 640},
    "epsilon": 0.1,
    "psi0": {"delta": 0.2, "x0": 0.0, "p0": 0.0},
    "sensors": 50,
    "sigma": 0.05,
    "quad_n": 8,
    "z": 0.0,
    "m_eval": None,
    "seed": 0,
    "output_dir": "runs",
    "test_z": [0.0976, -0.57315],
    "train": {
        "optimizer": "sgd",
        "eta0": 1e-3,
        "decay": 1e-4,
        "tau": 1.0,
        "lam_reg": 1e-4,
        "lam_pre": 1e-5,
        "omega": 0.01,
        "prior_std": 1.0,
        "batch_size": 1,
        "epochs": 2000,
        "burn_in": 1000,
        "thin": 5,
        "likelihood_std": None,
        "weights": [1.0, 1.0, 1e-4],
        "mlp_widths": [1, 50, 50, 50, 50, 50, 1],
        "branch_hidden": [100, 100],
        "trunk_hidden": [100, 100],
        "q": 50,
    },
    "convergence": {
        "n_steps_list": [16, 32, 64, 128],
        "refine": 8,
        "case": "gaussian_harmonic",
    },
    "regularity": {
        "eps_list": [0.5, 0.25, 0.125],
        "delta_z": 1e-3,
        "delta": 0.25,
        "x0": 0.9,
        "T": 0.4,
        "n_steps": 320,
    },
}


def _check_scalar(value, kind: str, path: str):
    if kind.startswith("choice:"):
        options = kind[len("choice:"):].split("|")
        if not isinstance(value, str) or value not in options:
            raise ConfigError(
                f"'{path}': expected one of {options}, got {value!r}"
            )
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"'{path}': expected string, got {type(value).__name__}")
        return value
    if kind in ("float", "float_or_null"):
        if value is None and kind == "float_or_null":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}': expected number, got {type(value).__name__}")
        return float(value)
    if kind in ("int", "int_or_null"):
        if value is None and kind == "int_or_null":
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}': expected integer, got {type(value).__name__}")
        return int(value)
    if kind == "list_float":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ConfigError(f"'{path}': expected a list of numbers")
        return [float(v) for v in value]
    if kind == "list_int":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise ConfigError(f"'{path}': expected a list of integers")
        return list(value)
    raise AssertionError(f"unhandled schema kind {kind}")


def _merge(user: dict, schema: dict, defaults: dict, prefix: str = "") -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"'{prefix or '<root>'}': expected an object")
    out = {}
    for key, val in user.items():
        if key not in schema:
            raise ConfigError(f"unknown key '{prefix}{key}'")
    for key, kind in schema.items():
        path = f"{prefix}{key}"
        if isinstance(kind, dict):
            out[key] = _merge(user.get(key, {}), kind, defaults[key], path + ".")
        elif key in user:
            out[key] = _check_scalar(user[key], kind, path)
        else:
            out[key] = defaults[key]
    return out


@dataclass
class ExperimentConfig:
    """Fully resolved configuration; nested blocks stay plain dicts."""

    raw: dict = field(repr=False)

    def __getitem__(self, key: str):
        return self.raw[key]

    @property
    def problem(self) -> str:
        return self.raw["problem"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def echo(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.raw, fh, indent=2, sort_keys=True)
            fh.write("\n")


def config_from_dict(doc: dict) -> ExperimentConfig:
    return ExperimentConfig(_merge(doc, _SCHEMA, _DEFAULTS))


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON document, apply defaults, reject unknown keys."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e}") from e
    return config_from_dict(doc)


def apply_override(doc: dict, dotted: str, value: str) -> None:
    """Set ``a.b.c=value`` in a raw document; values parse as JSON, falling
    back to a bare string."""
    keys = dotted.split(".")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object at '{k}'")
    node[keys[-1]] = parsed
