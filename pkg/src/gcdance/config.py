"""Versioned experiment configuration, validated against a JSON schema."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .denoiser import DenoiserConfig
from .io_utils import config_hash
from .training import DEFAULT_WEIGHTS, MTL_MODES, TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gcdance experiment config",
    **_obj({
        "version": {"const": CONFIG_VERSION},
        "skeleton": {"type": "string"},
        "vocabulary": {"type": ["string", "null"]},
        "denoiser": _obj({"width": _INT, "heads": _INT, "layers": _INT, "music_dim": _INT,
                          "embed_dim": _INT, "mlp_ratio": _INT, "body_dim": _INT, "hand_dim": _INT}),
        "schedule": _obj({"T": _INT, "kind": {"enum": ["cosine", "linear"]},
                          "renoise": {"enum": ["marginal", "posterior"]}}),
        "mtl": _obj({"mode": {"enum": list(MTL_MODES)},
                     "weights": {"type": "array", "items": {"type": "number", "minimum": 0},
                                 "minItems": 5, "maxItems": 5},
                     "aggregate_every": _INT}),
        "optimizer": _obj({"lr": _NUM, "steps": {"type": "integer", "minimum": 0}, "batch": _INT}),
        "seeds": _obj({"model": {"type": "integer", "minimum": 0},
                       "train": {"type": "integer", "minimum": 0},
                       "corpus": {"type": "integer", "minimum": 0}}),
        "data": _obj({"dir": {"type": ["string", "null"]},
                      "held_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
        "training": _obj({"eval_every": _INT, "n_eval": _INT,
                          "checkpoint_every": {"type": "integer", "minimum": 0},
                          "classifier_warmup": {"type": "integer", "minimum": 0}}),
    }, required=["version"]),
}


@dataclass
class ScheduleConfig:
    T: int = 50
    kind: str = "cosine"
    renoise: str = "marginal"


@dataclass
class MTLConfig:
    mode: str = "nash"
    weights: list = field(default_factory=lambda: list(DEFAULT_WEIGHTS))
    aggregate_every: int = 1


@dataclass
class OptimizerConfig:
    lr: float = 2e-4
    steps: int = 2000
    batch: int = 16


@dataclass
class SeedConfig:
    model: int = 0
    train: int = 0
    corpus: int = 0


@dataclass
class DataConfig:
    dir: str | None = None
    held_frac: float = 0.2


@dataclass
class LoopConfig:
    eval_every: int = 100
    n_eval: int = 64
    checkpoint_every: int = 0
    classifier_warmup: int = 300


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    skeleton: str = "smpl52"
    vocabulary: str | None = None
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mtl: MTLConfig = field(default_factory=MTLConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    data: DataConfig = field(default_factory=DataConfig)
    training: LoopConfig = field(default_factory=LoopConfig)

    _SECTIONS = {"denoiser": DenoiserConfig, "schedule": ScheduleConfig, "mtl": MTLConfig,
                 "optimizer": OptimizerConfig, "seeds": SeedConfig, "data": DataConfig,
                 "training": LoopConfig}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        validate_config(doc)
        kw = {}
        for key, value in doc.items():
            section = cls._SECTIONS.get(key)
            kw[key] = section(**value) if section else value
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}

    def with_overrides(self, **sections) -> "ExperimentConfig":
        doc = self.to_dict()
        for section, values in sections.items():
            doc[section].update({k: v for k, v in values.items() if v is not None})
        return ExperimentConfig.from_dict(doc)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.optimizer.steps, batch=self.optimizer.batch, lr=self.optimizer.lr,
                           mtl=self.mtl.mode, weights=tuple(self.mtl.weights),
                           aggregate_every=self.mtl.aggregate_every, T=self.schedule.T,
                           schedule=self.schedule.kind, seed=self.seeds.train,
                           eval_every=self.training.eval_every, n_eval=self.training.n_eval,
                           checkpoint_every=self.training.checkpoint_every,
                           classifier_warmup=self.training.classifier_warmup)


def validate_config(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("version") not in (None, CONFIG_VERSION) and "version" in doc:
        raise ConfigError(f"unsupported config version {doc['version']!r} (expected {CONFIG_VERSION})")
    try:
        jsonschema.validate(copy.deepcopy(doc), CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
