"""Training configuration and its JSON file schema.

A config file is a JSON object; every key is optional::

    {
      "schema_version": 1,
      "task": "linear",
      "epochs": 500,
      "batch_size": 32,
      "learning_rate": 0.002,
      "lr_schedule": "constant",
      "optimizer": {"name": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
      "head": {"kind": "regression", "n_classes": 100},
      "network": {"hidden": 100, "activation": "relu"},
      "regularizer": {"lambda_d": 0.001, "lambda_t": 0.0, "sample_size_M": 0,
                      "weight_fn": "l2", "feature_distance": "l2",
                      "normalize_features": true, "label_bins_for_centers": 10,
                      "detach_centers": false},
      "seeds": [0],
      "eval_every": 25,
      "entropy": {"subset": 512, "seed": 0, "normalize": false, "every": 0}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InvalidInputError, MalformedFileError, VersionMismatchError
from ..objectives import RegularizerConfig

SCHEMA_VERSION = 1
TASKS = ("linear", "nonlinear")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "linear"
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 2e-3
    lr_schedule: str = "constant"
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    head: str = "regression"
    n_classes: int = 100
    hidden: int = 100
    activation: str = "relu"
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    seeds: tuple[int, ...] = (0,)
    eval_every: int = 25
    entropy_subset: int = 512
    entropy_seed: int = 0
    entropy_normalize: bool = False
    entropy_every: int = 0  # 0: follow eval_every

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"task must be one of {TASKS}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidInputError("epochs, batch_size and eval_every must be >= 1")
        if self.entropy_every < 0:
            raise InvalidInputError("entropy_every must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidInputError("lr_schedule must be 'constant' or 'cosine'")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError("optimizer must be 'adam' or 'sgd'")
        if self.head not in ("regression", "classification"):
            raise InvalidInputError("head must be 'regression' or 'classification'")
        if self.head == "classification" and self.n_classes < 2:
            raise InvalidInputError("classification head needs n_classes >= 2")
        if not self.seeds:
            raise InvalidInputError("seeds must be nonempty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_regularizer(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, regularizer=dataclasses.replace(self.regularizer, **changes))

    def to_dict(self) -> dict:
        r = self.regularizer
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_schedule": self.lr_schedule,
            "optimizer": {"name": self.optimizer, "beta1": self.beta1,
                          "beta2": self.beta2, "eps": self.adam_eps},
            "head": {"kind": self.head, "n_classes": self.n_classes},
            "network": {"hidden": self.hidden, "activation": self.activation},
            "regularizer": dataclasses.asdict(r),
            "seeds": list(self.seeds),
            "eval_every": self.eval_every,
            "entropy": {"subset": self.entropy_subset, "seed": self.entropy_seed,
                        "normalize": self.entropy_normalize, "every": self.entropy_every},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise VersionMismatchError(f"config schema {version}, expected {SCHEMA_VERSION}")
        kw = {}
        for key in ("task", "epochs", "batch_size", "learning_rate", "lr_schedule", "seeds",
                    "eval_every"):
            if key in d:
                kw[key] = d.pop(key)
        sections = {
            "optimizer": {"name": "optimizer", "beta1": "beta1", "beta2": "beta2", "eps": "adam_eps"},
            "head": {"kind": "head", "n_classes": "n_classes"},
            "network": {"hidden": "hidden", "activation": "activation"},
            "entropy": {"subset": "entropy_subset", "seed": "entropy_seed",
                        "normalize": "entropy_normalize", "every": "entropy_every"},
        }
        for section, mapping in sections.items():
            sub = dict(d.pop(section, {}))
            for src, dst in mapping.items():
                if src in sub:
                    kw[dst] = sub.pop(src)
            if sub:
                raise InvalidInputError(f"unknown keys in {section}: {sorted(sub)}")
        if "regularizer" in d:
            reg = d.pop("regularizer")
            known = {f.name for f in dataclasses.fields(RegularizerConfig)}
            if set(reg) - known:
                raise InvalidInputError(f"unknown regularizer keys: {sorted(set(reg) - known)}")
            kw["regularizer"] = RegularizerConfig(**reg)
        if d:
            raise InvalidInputError(f"unknown config keys: {sorted(d)}")
        return cls(**kw)


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedFileError(f"{path}: config must be a JSON object")
    return TrainConfig.from_dict(data)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
