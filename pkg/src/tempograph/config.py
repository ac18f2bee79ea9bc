"""Run configuration: a JSON file, validated strictly, plus overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .model import ModelConfig
from .objective import OptimizerState
from .schema import SchemaError, profile as get_profile

CONFIG_ENV = "TEMPOGRAPH_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class OptimizerSettings:
    lr: float = 5e-5
    mu: float = 0.9
    nu: float = 0.9
    epsilon: float = 1e-12
    clip_norm: float = 5.0
    decay: float = 0.75
    decay_interval: int = 5000

    def state(self) -> OptimizerState:
        return OptimizerState(**asdict(self))


@dataclass
class TrainSettings:
    epochs: int = 40
    batch_size: int = 1
    seed: int = 0
    resample_masks: bool = True
    target_f1: float | None = None
    log_every: int = 0


@dataclass
class PreprocessSettings:
    max_len: int = 128
    seed: int = 0


@dataclass
class InferenceSettings:
    batch_size: int = 32
    n_jobs: int = 1


@dataclass
class BenchSettings:
    repetitions: int = 10
    warmup: int = 1
    sentences: int | None = None


@dataclass
class PathSettings:
    corpus: str | None = None
    windows: str | None = None
    dev: str | None = None
    vectors: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None
    predictions: str | None = None
    gold: str | None = None


@dataclass
class RunConfig:
    # None means "not specified": commands that need a profile fall back to
    # tbdense, while predict takes the checkpoint's profile unchecked.
    profile: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    @property
    def profile_name(self) -> str:
        return self.profile or "tbdense"

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name: f for f in fields(RunConfig)}


_TYPES = {"int": (int,), "float": (int, float), "bool": (bool,), "str": (str,)}


def _type_ok(annotation: str, value) -> bool:
    parts = [p.strip() for p in str(annotation).split("|")]
    if value is None:
        return "None" in parts
    for p in parts:
        allowed = _TYPES.get(p)
        if allowed is None:
            continue
        if isinstance(value, bool) and bool not in allowed:
            continue
        if isinstance(value, allowed):
            return True
    return False


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    for name, value in data.items():
        if not _type_ok(known[name].type, value):
            raise ConfigError(f"{where}.{name}: {value!r} is not of type {known[name].type}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    cfg = RunConfig()
    for name, value in data.items():
        current = getattr(cfg, name)
        if is_dataclass(current):
            setattr(cfg, name, _build(type(current), value, name))
        elif not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
        else:
            setattr(cfg, name, value)
    check(cfg)
    return cfg


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    """Read ``path``, else the file named by $TEMPOGRAPH_CONFIG, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from None
    return config_from_dict(data)


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: RunConfig, assignment: str) -> None:
    """Apply ``section.key=value`` (value parsed as JSON when possible)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    set_value(cfg, key.strip(), _coerce(raw))


def set_value(cfg: RunConfig, key: str, value) -> None:
    parts = key.split(".")
    if len(parts) == 1 and parts[0] == "profile":
        cfg.profile = value
    elif len(parts) == 2 and parts[0] in _SECTIONS and is_dataclass(getattr(cfg, parts[0])):
        section = getattr(cfg, parts[0])
        names = {f.name for f in fields(section)}
        if parts[1] not in names:
            raise ConfigError(f"unknown config key {key!r}")
        data = asdict(section)
        data[parts[1]] = value
        setattr(cfg, parts[0], _build(type(section), data, parts[0]))
    else:
        raise ConfigError(f"unknown config key {key!r}")
    check(cfg)


def check(cfg: RunConfig) -> None:
    try:
        get_profile(cfg.profile_name)
    except SchemaError as exc:
        raise ConfigError(str(exc)) from None
    t = cfg.train
    if t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("train.epochs and train.batch_size must be >= 1")
    if cfg.optimizer.lr <= 0 or cfg.optimizer.clip_norm <= 0 or cfg.optimizer.decay_interval < 1:
        raise ConfigError("optimizer lr, clip_norm and decay_interval must be positive")
    if cfg.preprocess.max_len < 1:
        raise ConfigError("preprocess.max_len must be >= 1")
    if cfg.inference.batch_size < 1 or cfg.inference.n_jobs < 1:
        raise ConfigError("inference.batch_size and inference.n_jobs must be >= 1")
    if cfg.bench.repetitions < 1 or cfg.bench.warmup < 0:
        raise ConfigError("bench.repetitions must be >= 1 and bench.warmup >= 0")
