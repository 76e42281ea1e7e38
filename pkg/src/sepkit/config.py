"""Run configuration: dataclass schema, YAML loading, dotted overrides.

Experiments are declarative: a config file plus ``key=value`` overrides
fully determine a run, and the canonical hash of the resolved config goes
into ``run.meta`` for reproducibility checks.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .datagen import DataConfig
from .errors import InvalidConfig


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes; desk-scale defaults, paper-scale via preset."""

    units: int = 64
    embed_layers: int = 2
    embed_dim: int = 8
    dropout: float = 0.5
    concat_magnitude: bool = False

    def __post_init__(self):
        if self.units < 1 or self.embed_layers < 1 or self.embed_dim < 1:
            raise InvalidConfig("model sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule; defaults follow the published recipe."""

    stage: str = "dc"
    lambda_: float = 0.05
    alpha: float = 0.1
    batch_utts: int = 16
    lr_init: float = 0.0005
    lr_decay: float = 0.7
    min_epochs: int = 30
    max_epochs: int = 40
    early_stop_rel: float = 0.01
    dc_epochs: int = 30  # the embedding pretrain stage runs a fixed count
    seed: int = 0

    def __post_init__(self):
        if self.stage not in ("dc", "joint", "dl"):
            raise InvalidConfig(f"unknown stage {self.stage!r}")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise InvalidConfig("lambda must lie in [0, 1]")
        if self.alpha < 0:
            raise InvalidConfig("alpha must be non-negative")
        if self.lr_init <= 0 or not 0.0 < self.lr_decay <= 1.0:
            raise InvalidConfig("learning rate settings out of range")
        if self.batch_utts < 1 or self.min_epochs < 1 or self.max_epochs < self.min_epochs:
            raise InvalidConfig("epoch/batch settings out of range")


@dataclass(frozen=True)
class ExperimentConfig:
    """Multi-seed comparison run: baseline vs embedding-features systems."""

    seeds: tuple[int, ...] = (0, 1, 2)
    lambdas: tuple[float, ...] = (0.01, 0.05, 0.1)
    dl_lambda: float = 0.05
    dc_epochs: int = 10
    joint_min_epochs: int = 6
    joint_max_epochs: int = 10
    dl_min_epochs: int = 3
    dl_max_epochs: int = 5
    baseline_min_epochs: int = 10
    baseline_max_epochs: int = 14

    def __post_init__(self):
        if not self.seeds:
            raise InvalidConfig("need at least one seed")
        if self.dl_lambda not in self.lambdas:
            raise InvalidConfig("dl_lambda must be one of the swept lambdas")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    sample_rate: int = 8000
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


PRESETS = ("desk", "paper")


def preset_config(name: str = "desk") -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "paper":
        return RunConfig(
            model=ModelConfig(units=896, embed_dim=40),
            experiment=ExperimentConfig(
                dc_epochs=30,
                joint_min_epochs=30,
                joint_max_epochs=100,
                dl_min_epochs=30,
                dl_max_epochs=100,
                baseline_min_epochs=30,
                baseline_max_epochs=100,
            ),
        )
    raise InvalidConfig(f"unknown preset {name!r}; choose from {PRESETS}")


def _build_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise InvalidConfig(f"{path}.{key}: unknown config key")
        kwargs[key] = _coerce(known[key].type, value, f"{path}.{key}")
    return cls(**kwargs)


def _coerce(type_name, value, path: str):
    # dataclass field types arrive as strings under `from __future__ annotations`
    name = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", str(type_name))
    if name in ("DataConfig",):
        return _build_dataclass(DataConfig, value, path)
    if name in ("ModelConfig",):
        return _build_dataclass(ModelConfig, value, path)
    if name in ("TrainConfig",):
        return _build_dataclass(TrainConfig, value, path)
    if name in ("ExperimentConfig",):
        return _build_dataclass(ExperimentConfig, value, path)
    try:
        if name == "int":
            if isinstance(value, bool) or (not isinstance(value, int) and int(value) != float(value)):
                raise ValueError
            return int(value)
        if name == "float":
            return float(value)
        if name == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError
        if name == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if name.startswith("tuple"):
            if not isinstance(value, (list, tuple)):
                raise ValueError
            inner = float if "float" in name else int
            return tuple(inner(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{path}: cannot interpret {value!r} as {name}") from exc
    raise InvalidConfig(f"{path}: unsupported config field type {name}")


def config_from_dict(data: dict) -> RunConfig:
    return _build_dataclass(RunConfig, data, "config")


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Load YAML (or the desk preset when ``path`` is None) and apply

    dotted ``section.key=value`` overrides."""
    if path is None:
        data = config_to_dict(preset_config("desk"))
    elif str(path) in PRESETS:
        data = config_to_dict(preset_config(str(path)))
    else:
        try:
            raw = Path(path).read_text()
        except OSError as exc:
            raise InvalidConfig(f"cannot read config file {path}: {exc}") from exc
        try:
            loaded = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"{path}: invalid YAML ({exc})") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise InvalidConfig(f"{path}: config root must be a mapping")
        base = config_to_dict(preset_config(str(loaded.pop("preset", "desk"))))
        _deep_update(base, loaded)
        data = base
    for item in overrides or []:
        _apply_override(data, item)
    return config_from_dict(data)


def _deep_update(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise InvalidConfig(f"override {item!r} must look like section.key=value")
    dotted, raw = item.split("=", 1)
    keys = dotted.strip().split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise InvalidConfig(f"override {item!r}: no section {key!r}")
        node = node[key]
    if keys[-1] not in node:
        raise InvalidConfig(f"override {item!r}: unknown key {keys[-1]!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[keys[-1]] = value


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
