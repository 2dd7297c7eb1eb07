"""Run configuration: a YAML file with a ``version`` field, checked strictly.

Example::

    version: 1
    seed: 0
    scenario:
      preset: ticket            # or a full ``spec`` mapping
      options: {correlated: false}
      transform: {noise_prob: 0.5}
    data: {n_train: 2000, n_test: 200}
    model: {n_h: 64, backbone: {stages: [[16, 2], [32, 2], [32, 1]]}}
    train: {epochs: 40, batch_size: 16}

Unknown keys anywhere are errors.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backbone import BackboneConfig
from .domain import CharVocab, EntitySchema
from .model import ModelConfig
from .synthgen import PRESETS, Scenario, ScenarioSpec, SlotSpec, TransformSpec
from .training import TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _strict(cls, data: Any, where: str):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    unknown = set(data) - _fields(cls)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed {sorted(_fields(cls))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _check_keys(data: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed {sorted(allowed)}")


@dataclass
class DataConfig:
    n_train: int = 2000
    n_test: int = 200

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")


@dataclass
class RunConfig:
    scenario: Scenario
    model: ModelConfig
    train: TrainConfig
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    version: int = CONFIG_VERSION

    @property
    def schema(self) -> EntitySchema:
        return self.scenario.schema

    @property
    def vocab(self) -> CharVocab:
        return self.scenario.vocab

    def validate(self) -> "RunConfig":
        """Cross-field checks run before any command does work."""
        slots = self.scenario.spec.entity_names
        entities = self.schema.entity_names
        missing = [e for e in entities if e not in slots]
        if missing:
            raise ConfigError(f"schema entities {missing} are not scenario slots {slots}")
        unread = [s for s in slots if s not in entities]
        if unread:
            raise ConfigError(f"scenario slots {unread} are not read by any decoder")
        for d in self.schema.decoders:
            need = sum(self.scenario.spec.slot(e).max_len + 1 for e in d.entities)
            if need > d.max_steps:
                raise ConfigError(f"decoder {list(d.entities)} has {d.max_steps} steps but its entities "
                                  f"need up to {need} (lengths plus one EOS each)")
        size = self.scenario.transform.out_size or (self.scenario.spec.height, self.scenario.spec.width)
        if tuple(size) != tuple(self.model.image_size):
            raise ConfigError(f"model.image_size {list(self.model.image_size)} != generated image size {list(size)}")
        try:
            self.model.backbone.check_image(*self.model.image_size)
        except ValueError as e:
            raise ConfigError(f"model.backbone: {e}") from e
        return self

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "scenario": {
                "spec": self.scenario.spec.to_dict(),
                "schema": self.schema.to_dict(),
                "transform": self.scenario.transform.to_dict(),
            },
            "data": dataclasses.asdict(self.data),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
        }


def _scenario(raw: Any, seed: int) -> Scenario:
    if not isinstance(raw, Mapping):
        raise ConfigError("scenario: expected a mapping")
    _check_keys(raw, {"preset", "options", "spec", "schema", "transform"}, "scenario")
    base = None
    if "preset" in raw:
        name = raw["preset"]
        if name not in PRESETS:
            raise ConfigError(f"scenario.preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
        try:
            base = PRESETS[name](seed=seed, **(raw.get("options") or {}))
        except TypeError as e:
            raise ConfigError(f"scenario.options: {e}") from e
    elif "options" in raw:
        raise ConfigError("scenario.options needs scenario.preset")
    if "spec" in raw:
        spec_raw = dict(raw["spec"])
        slots = spec_raw.pop("slots", None)
        if not slots:
            raise ConfigError("scenario.spec.slots: at least one slot required")
        slot_objs = [_strict(SlotSpec, s, f"scenario.spec.slots[{i}]") for i, s in enumerate(slots)]
        spec_raw.setdefault("seed", seed)
        try:
            spec = _strict(ScenarioSpec, {**spec_raw, "slots": slot_objs}, "scenario.spec")
        except ValueError as e:
            raise ConfigError(f"scenario.spec: {e}") from e
    elif base is not None:
        spec = base.spec
    else:
        raise ConfigError("scenario: give a preset or a spec")
    if "schema" in raw:
        try:
            schema = EntitySchema.from_dict(raw["schema"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"scenario.schema: {e}") from e
    elif base is not None:
        schema = base.schema
    else:
        raise ConfigError("scenario.schema is required without a preset")
    transform = base.transform if base is not None else TransformSpec()
    if "transform" in raw:
        merged = {**transform.to_dict(), **_as_map(raw["transform"], "scenario.transform")}
        transform = _strict(TransformSpec, merged, "scenario.transform")
    return Scenario(spec, schema, transform)


def _as_map(x, where: str) -> dict:
    if x is None:
        return {}
    if not isinstance(x, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    return dict(x)


def parse_config(raw: Any) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config: top level must be a mapping")
    _check_keys(raw, {"version", "seed", "scenario", "data", "model", "train"}, "config")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config: version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")
    if "scenario" not in raw:
        raise ConfigError("config: scenario section is required")
    scenario = _scenario(raw["scenario"], seed)
    model_raw = _as_map(raw.get("model"), "model")
    model_raw.setdefault("image_size", list(scenario.transform.out_size or (scenario.spec.height, scenario.spec.width)))
    if "backbone" in model_raw:
        model_raw["backbone"] = _strict(BackboneConfig, model_raw["backbone"], "model.backbone")
    model = _strict(ModelConfig, model_raw, "model")
    train_raw = _as_map(raw.get("train"), "train")
    train_raw.setdefault("seed", seed)
    train = _strict(TrainConfig, train_raw, "train")
    data = _strict(DataConfig, raw.get("data"), "data")
    return RunConfig(scenario, model, train, data, seed).validate()


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}") from e
    return parse_config(raw)
