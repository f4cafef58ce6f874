"""Global configuration: a YAML file of sections, overridden by environment
variables and then by command-line flags."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from kinres.regressor import RegressorHyper
from kinres.rewards import RewardWeights
from kinres.sim.scene import SimConfig
from kinres.trainer.ppo import PPOHyper

ENV_PREFIX = "KINRES_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    model: Optional[str] = None
    scene: Optional[str] = None
    dataset: Optional[str] = None
    checkpoints: str = "checkpoints"
    out: str = "out"


@dataclass(frozen=True)
class PolicyConfig:
    iterations: int = 200
    steps_per_iter: int = 2048
    hidden: tuple = (512, 256)
    log_std: float = -1.0
    mode: str = "residual"
    workers: int = 1
    value_warmup: int = 0
    random_start: bool = True


@dataclass(frozen=True)
class FinetuneConfig:
    iterations: int = 20
    steps_per_iter: int = 2048
    lr: float = 5e-5
    target_kl: float = 0.02


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    regressor: int = 0
    policy: int = 0


@dataclass(frozen=True)
class GlobalConfig:
    paths: Paths = field(default_factory=Paths)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    ppo: PPOHyper = field(default_factory=PPOHyper)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    regressor: RegressorHyper = field(default_factory=RegressorHyper)
    seeds: Seeds = field(default_factory=Seeds)
    sim: SimConfig = field(default_factory=SimConfig)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        return _coerce(next(a for a in args if a is not type(None)), value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(cls, data: Any, where: str):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")
    kw = {}
    for k, v in data.items():
        tp = hints[k]
        sub = f"{where}.{k}" if where else k
        kw[k] = _build(tp, v, sub) if dataclasses.is_dataclass(tp) else _coerce(tp, v, sub)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


def to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = to_dict(v) if dataclasses.is_dataclass(v) else (list(v) if isinstance(v, tuple) else v)
    return out


def _set(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        nxt = cur.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted}: {k} is not a section")
        cur = nxt
    cur[keys[-1]] = value


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    """``KINRES_SECTION__KEY=value`` pairs as dotted keys; values are parsed
    as YAML scalars so numbers and booleans keep their types."""
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX) and len(k) > len(ENV_PREFIX):
            out[k[len(ENV_PREFIX):].lower().replace("__", ".")] = yaml.safe_load(v)
    return out


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> GlobalConfig:
    """File, then environment, then ``overrides`` (dotted keys); later wins."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        try:
            doc = yaml.safe_load(p.read_text()) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config {p} is not valid YAML: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {p} must be a mapping")
    for k, v in env_overrides(environ).items():
        _set(doc, k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            _set(doc, k, v)
    return _build(GlobalConfig, doc, "")
