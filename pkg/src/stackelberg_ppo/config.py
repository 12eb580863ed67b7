"""TOML run configuration: loading, ``key=value`` overrides and round-tripping."""

from __future__ import annotations

import math
import sys
import typing
from dataclasses import fields
from pathlib import Path

import tomli_w

from .envs import make_env
from .errors import ConfigError
from .trainer import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

IGNORED_SECTIONS = ("run",)
_HINTS = typing.get_type_hints(TrainConfig)


def _coerce(name: str, value):
    hint = _HINTS[name]
    if name == "ppo_clip_eps":
        if value is None or value is False or (isinstance(value, str) and value.lower() == "none"):
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif name == "fisher_lambda":
        if isinstance(value, str) and value.lower() == "inf":
            return math.inf
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif name == "env_params":
        if isinstance(value, dict):
            return dict(value)
    elif name in ("leader_horizon", "follower_horizon"):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() == "none":
            return None
    elif hint is bool:
        if isinstance(value, bool):
            return value
    elif hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif hint is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"invalid value {value!r} for {name}")


def config_from_dict(data: dict) -> TrainConfig:
    """Build a :class:`TrainConfig`; unknown keys raise :class:`ConfigError`."""
    known = set(TrainConfig.field_names())
    kwargs = {}
    for key, value in data.items():
        if key in IGNORED_SECTIONS and isinstance(value, dict):
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, value)
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_override(text: str) -> tuple[list[str], object]:
    """``"a.b=1.5"`` -> ``(["a", "b"], 1.5)``; values use TOML syntax, bare words are strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for text in overrides or ():
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-table")
        node[path[-1]] = value
    return data


def load_config(path, overrides=()) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(apply_overrides(data, overrides))


def config_to_dict(cfg: TrainConfig) -> dict:
    """TOML-representable mapping that :func:`config_from_dict` maps back to ``cfg``."""
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            value = "none"
        elif isinstance(value, float) and math.isinf(value):
            value = "inf"
        out[f.name] = value
    return out


def dump_config(cfg: TrainConfig, run_section: dict | None = None) -> str:
    data = config_to_dict(cfg)
    env_params = data.pop("env_params")
    doc = dict(data)
    doc["env_params"] = env_params
    if run_section:
        doc["run"] = run_section
    return tomli_w.dumps(doc)


def env_from_config(cfg: TrainConfig):
    """Instantiate the configured environment with the run's discount and horizons."""
    kwargs = dict(cfg.env_params)
    kwargs["gamma"] = cfg.gamma
    if cfg.leader_horizon is not None:
        kwargs["leader_horizon"] = cfg.leader_horizon
    if cfg.follower_horizon is not None:
        kwargs["follower_max_steps"] = cfg.follower_horizon
    try:
        return make_env(cfg.env, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build environment {cfg.env!r}: {exc}") from exc

