"""Experiment configuration: INI-like sections, JSON-typed values.

Format, line by line: blank lines and ``#`` comments are skipped,
``[section]`` opens a section, and ``key = <value>`` assigns a JSON value
(so strings are quoted, lists bracketed, null is ``null``).  Unknown
sections or keys, duplicate keys, and type mismatches are rejected with
the offending line number.  :func:`render_config` re-emits a resolved
config (defaults filled in) in canonical order so runs are auditable and
reproducible from their own artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

from .analysis import GroupThresholds, default_thresholds
from .data import DATASET_SHAPES
from .models import ModelSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Malformed, unknown, or ill-typed configuration input."""


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


_CHECKERS = {
    "int": (_is_int, "an integer"),
    "number": (_is_num, "a number"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "bool": (lambda v: isinstance(v, bool), "a boolean"),
    "int_list": (lambda v: isinstance(v, list) and all(_is_int(x) for x in v),
                 "a list of integers"),
    "str_list": (lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
                 "a list of strings"),
    "int_or_null": (lambda v: v is None or _is_int(v), "an integer or null"),
    "number_or_null": (lambda v: v is None or _is_num(v), "a number or null"),
    "str_or_null": (lambda v: v is None or isinstance(v, str), "a string or null"),
    "sources_or_null": (
        lambda v: v is None or (isinstance(v, list) and all(
            isinstance(s, dict) and {"filename", "url"} <= set(s) for s in v)),
        "null or a list of {filename, url, sha256} objects"),
}

# section -> key -> (type tag, default)
SCHEMA = {
    "experiment": {
        "family": ("str", "dnn"),
        "dataset": ("str", "mnist"),
        "trials": ("int", 30),
        "epochs": ("int", 20),
        "batch_size": ("int", 100),
        "lr": ("number", 0.001),
        "beta1": ("number", 0.9),
        "beta2": ("number", 0.999),
        "eps": ("number", 1e-8),
        "base_seed": ("int", 0),
        "subset": ("int_or_null", None),
        "classes": ("int", 10),
        "init_mean": ("number", 0.0),
        "init_std": ("number_or_null", None),  # null -> family default
        "hidden": ("int_list", [100, 100]),
        "channels": ("int", 8),
        "gap": ("bool", False),
        "d_model": ("int", 784),
        "nhead": ("int", 4),
        "patch_grid": ("int", 2),
    },
    "analysis": {
        "bins": ("int", 60),
        "bandwidth": ("number_or_null", None),
        "non_below": ("number_or_null", None),
        "mid_min": ("number_or_null", None),
        "high_min": ("number_or_null", None),
    },
    "projection": {
        "perplexity": ("number", 30.0),
        "iterations": ("int", 1000),
        "seed": ("int", 0),
        "groups": ("str_list", []),   # empty = family's layer groups
    },
    "data": {
        "cache": ("str_or_null", None),
        "sources": ("sources_or_null", None),
    },
    "output": {
        "dir": ("str", "runs/experiment"),
    },
}


def default_config() -> dict:
    return {section: {key: spec[1] for key, spec in keys.items()}
            for section, keys in SCHEMA.items()}


def parse_config(text: str, origin: str = "<config>") -> dict:
    """Parse and validate config text; returns a fully-defaulted dict."""
    cfg = default_config()
    seen: set[tuple[str, str]] = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(
                    f"{origin}:{lineno}: unknown section [{section}]; "
                    f"expected one of {sorted(SCHEMA)}")
            continue
        if "=" not in line:
            raise ConfigError(
                f"{origin}:{lineno}: expected 'key = value' or '[section]', got {line!r}")
        if section is None:
            raise ConfigError(
                f"{origin}:{lineno}: key outside any [section]")
        key, _, value_text = line.partition("=")
        key = key.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(
                f"{origin}:{lineno}: unknown key {key!r} in section [{section}]; "
                f"expected one of {sorted(SCHEMA[section])}")
        if (section, key) in seen:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r} in [{section}]")
        seen.add((section, key))
        try:
            value = json.loads(value_text.strip())
        except json.JSONDecodeError as err:
            raise ConfigError(
                f"{origin}:{lineno}: value for {key!r} is not valid JSON: {err}") from None
        tag = SCHEMA[section][key][0]
        check, expect = _CHECKERS[tag]
        if not check(value):
            raise ConfigError(
                f"{origin}:{lineno}: {key!r} must be {expect}, got {value!r}")
        if tag in ("number", "number_or_null") and value is not None:
            value = float(value)
        cfg[section][key] = value
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, origin=str(path))


def render_config(cfg: dict) -> str:
    """Canonical text for a resolved config (schema order, JSON values)."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {json.dumps(cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# bridging to runtime objects
# ---------------------------------------------------------------------------

# reference operating point: deviations rejected under strict paper mode
STRICT_SETTINGS = {"epochs": 20, "batch_size": 100, "lr": 0.001,
                   "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "subset": None}


def check_strict(cfg: dict) -> None:
    """Reject configs that deviate from the reference training settings."""
    exp = cfg["experiment"]
    for key, pinned in STRICT_SETTINGS.items():
        if exp[key] != pinned:
            raise ConfigError(
                f"strict mode: experiment.{key} must be {pinned!r}, got {exp[key]!r}")
    if exp["dataset"] not in DATASET_SHAPES:
        raise ConfigError(f"strict mode: unknown dataset {exp['dataset']!r}")


def model_spec_from_config(cfg: dict) -> ModelSpec:
    exp = cfg["experiment"]
    dataset = exp["dataset"]
    if dataset not in DATASET_SHAPES:
        raise ConfigError(
            f"unknown dataset {dataset!r}; expected one of {sorted(DATASET_SHAPES)}")
    common = dict(input_shape=DATASET_SHAPES[dataset], classes=exp["classes"],
                  init_mean=exp["init_mean"], init_std=exp["init_std"])
    try:
        if exp["family"] == "dnn":
            return ModelSpec(family="dnn", hidden=tuple(exp["hidden"]), **common)
        if exp["family"] == "cnn":
            return ModelSpec(family="cnn", channels=exp["channels"],
                             gap=exp["gap"], **common)
        if exp["family"] == "vit":
            return ModelSpec(family="vit", d_model=exp["d_model"],
                             nhead=exp["nhead"], patch_grid=exp["patch_grid"],
                             **common)
    except ValueError as err:
        raise ConfigError(f"invalid experiment spec: {err}") from None
    raise ConfigError(f"unknown family {exp['family']!r}; expected dnn/cnn/vit")


def train_config_from_config(cfg: dict, parallel: int = 1,
                             fixed_clock: bool = False) -> TrainConfig:
    exp = cfg["experiment"]
    try:
        return TrainConfig(
            spec=model_spec_from_config(cfg), dataset=exp["dataset"],
            trials=exp["trials"], epochs=exp["epochs"],
            batch_size=exp["batch_size"], lr=exp["lr"], beta1=exp["beta1"],
            beta2=exp["beta2"], eps=exp["eps"], base_seed=exp["base_seed"],
            subset=exp["subset"], parallel=parallel, fixed_clock=fixed_clock,
            cache=cfg["data"]["cache"])
    except ValueError as err:
        raise ConfigError(f"invalid experiment config: {err}") from None


def thresholds_from_config(cfg: dict) -> GroupThresholds:
    exp = cfg["experiment"]
    base = default_thresholds(exp["dataset"], exp["family"])
    ana = cfg["analysis"]
    try:
        return GroupThresholds(
            non_below=base.non_below if ana["non_below"] is None else ana["non_below"],
            mid_min=base.mid_min if ana["mid_min"] is None else ana["mid_min"],
            high_min=base.high_min if ana["high_min"] is None else ana["high_min"])
    except ValueError as err:
        raise ConfigError(f"invalid thresholds: {err}") from None
