"""Run configuration: paper defaults, JSON files, environment, flag overrides.

Precedence (low to high): built-in defaults, --config JSON file, environment
variables (LORACOMPASS_<SECTION>_<FIELD>), command-line flags.  Unknown keys
anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .env import EnvConfig
from .errors import ValidationError
from .policy import LossWeights
from .sites import SiteGenParams

ENV_PREFIX = "LORACOMPASS_"


@dataclass
class ExploreConfig:
    beta: float = 8.0
    alpha: float = 0.5
    # None: take the tag-cell reference RSSI from the training site/checkpoint.
    reference_rssi: object = None


@dataclass
class NetConfig:
    m: int = 10
    channels: tuple = (16, 32, 64)
    hidden: int = 128
    lr: float = 1e-3
    batch_episodes: int = 50
    epochs: int = 200


@dataclass
class EvalSettings:
    episodes: int = 200
    reps: int = 10
    eps: float = 0.1
    rm_a0: float = 4.0


@dataclass
class SweepSettings:
    episodes: int = 200
    reps: int = 10
    train_epochs: int = 40


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    sitegen: SiteGenParams = field(default_factory=SiteGenParams)
    net: NetConfig = field(default_factory=NetConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def validate(self):
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        self.env.validate()
        self.loss.validate()
        self.sitegen.validate()
        if self.net.m < 1:
            raise ValidationError("net.m must be >= 1")
        if len(tuple(self.net.channels)) != 3:
            raise ValidationError("net.channels must have 3 entries")
        if self.explore.beta < 0:
            raise ValidationError("explore.beta must be >= 0")


SECTIONS = ("env", "explore", "loss", "sitegen", "net", "eval", "sweep")
TOP_FIELDS = ("seed", "threads")


def _coerce(raw, current):
    """Parse ``raw`` (string or JSON value) to the type of ``current``."""
    if isinstance(current, bool):
        if isinstance(raw, bool):
            return raw
        return str(raw).lower() in ("1", "true", "yes", "on")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        if isinstance(raw, str):
            raw = [p for p in raw.replace(",", " ").split() if p]
        return tuple(int(v) for v in raw)
    if current is None:  # optional float (reference_rssi)
        if raw is None or raw == "" or str(raw).lower() == "none":
            return None
        return float(raw)
    return raw


def _set_field(cfg: RunConfig, section, name, raw):
    if section is None:
        if name not in TOP_FIELDS:
            raise ValidationError("unknown config key %r" % name)
        setattr(cfg, name, _coerce(raw, getattr(cfg, name)))
        return
    if section not in SECTIONS:
        raise ValidationError("unknown config section %r" % section)
    obj = getattr(cfg, section)
    names = {f.name for f in fields(obj)}
    if name not in names:
        raise ValidationError("unknown config key %r in section %r" % (name, section))
    value = _coerce(raw, getattr(obj, name))
    if dataclasses.fields(obj) and obj.__dataclass_params__.frozen:
        setattr(cfg, section, dataclasses.replace(obj, **{name: value}))
    else:
        setattr(obj, name, value)


def apply_file(cfg: RunConfig, path):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a JSON object")
    for key, value in doc.items():
        if key in TOP_FIELDS:
            _set_field(cfg, None, key, value)
        elif key in SECTIONS:
            if not isinstance(value, dict):
                raise ValidationError("config section %r must be an object" % key)
            for name, raw in value.items():
                _set_field(cfg, key, name, raw)
        else:
            raise ValidationError("unknown config key %r" % key)


def apply_environ(cfg: RunConfig, environ=None):
    environ = os.environ if environ is None else environ
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        if rest in TOP_FIELDS:
            _set_field(cfg, None, rest, raw)
            continue
        head, _, name = rest.partition("_")
        if head in SECTIONS and name:
            _set_field(cfg, head, name, raw)
        else:
            raise ValidationError("unrecognized environment override %s" % key)


def apply_overrides(cfg: RunConfig, overrides):
    """overrides: {'section.field' or top-level field: value}."""
    for key, raw in overrides.items():
        if "." in key:
            section, name = key.split(".", 1)
            _set_field(cfg, section, name, raw)
        else:
            _set_field(cfg, None, key, raw)


def load_config(path=None, environ=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    if path:
        apply_file(cfg, path)
    apply_environ(cfg, environ)
    if overrides:
        apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg
