"""Run configuration: a strict YAML-backed schema with dotted-key overrides.

The schema is the dataclass tree rooted at RunConfig. Parsing rejects
unknown keys and wrong types, so a typo in a config file or a ``--set``
override fails fast instead of silently training the wrong model.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import CorpusSpec
from .network import EnhancerConfig
from .signal import MultiStftConfig
from .training import TrainConfig
from .util import fingerprint_dataclass


class ConfigError(ValueError):
    """Invalid configuration content (schema, types, or file syntax)."""


@dataclass(frozen=True)
class FeatureProviderSpec:
    """Which contextual-feature source to use.

    provider "stub" computes deterministic log-mel features, "precomputed"
    reads .feat files (enhance only), "none" requires fusion to be disabled.
    """

    provider: str = "stub"
    dim: int = 64
    seed: int = 0
    directory: str | None = None

    def __post_init__(self):
        if self.provider not in ("stub", "precomputed", "none"):
            raise ValueError(f"unknown feature provider {self.provider!r}")


@dataclass(frozen=True)
class RunConfig:
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    loss: MultiStftConfig = field(default_factory=MultiStftConfig)
    features: FeatureProviderSpec = field(default_factory=FeatureProviderSpec)

    def __post_init__(self):
        if self.features.provider == "none" and self.enhancer.fusion_enabled:
            raise ValueError("feature provider 'none' requires enhancer.fusion_enabled: false")
        if self.features.provider != "none" and self.enhancer.fusion_enabled:
            if self.features.dim != self.enhancer.feature_dim:
                raise ValueError(
                    f"features.dim ({self.features.dim}) must match "
                    f"enhancer.feature_dim ({self.enhancer.feature_dim})"
                )


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"{path}: null not allowed")
        last_error = None
        for arm in args:
            if arm is type(None):
                continue
            try:
                return _coerce(value, arm, path)
            except ConfigError as exc:
                last_error = exc
        raise last_error or ConfigError(f"{path}: no matching type")
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping for {_type_name(tp)}")
        return from_dict(tp, value, path)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported schema type {_type_name(tp)}")


def from_dict(cls, data: dict, path: str = ""):
    """Build a dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name in names & set(data):
        kwargs[name] = _coerce(data[name], hints[name], f"{path}.{name}".lstrip("."))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg) -> dict:
    """Dataclass tree -> plain dict/list structure (YAML/JSON friendly)."""
    return _plain(cfg)


def apply_override(data: dict, assignment: str):
    """Apply one ``a.b.c=value`` override in place; values parse as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    dotted, _, raw = assignment.partition("=")
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {assignment!r} has an empty key path")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: bad value ({exc})") from exc
    node = data
    for key in keys[:-1]:
        nxt = node.setdefault(key, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {assignment!r}: {key} is not a section")
        node = nxt
    node[keys[-1]] = value


def load_run_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Assemble a RunConfig from an optional YAML file plus overrides.

    ``seed`` (the CLI-level flag) rewrites every per-module seed so a whole
    invocation is reproducible from one number.
    """
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path}: invalid YAML ({exc})") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path}: top level must be a mapping")
        data = loaded
    for assignment in overrides:
        apply_override(data, assignment)
    if seed is not None:
        for section in ("training", "corpus", "features"):
            data.setdefault(section, {})["seed"] = seed
    return from_dict(RunConfig, data)


def fingerprint(cfg) -> str:
    return fingerprint_dataclass(cfg)


def dump_run_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
