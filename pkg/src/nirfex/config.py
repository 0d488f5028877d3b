"""Run configuration: a JSON key-value document plus dotted-path overrides.

Every CLI flag maps onto a config key; `--set a.b=value` reaches anything
else. Values in overrides parse as JSON first, falling back to raw strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import GeneratorConfig
from .model import ModelConfig


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: GeneratorConfig | None = field(default_factory=GeneratorConfig)
    data_dir: str | None = None
    graph: str | None = None  # incidence file; None uses the packaged table
    spectrum_weight: float = 0.1
    batch_size: int = 64
    epochs: int = 40
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    seed: int = 0
    k_folds: int = 5
    crop_margin: int = 0
    eval_fold: int | None = None  # hold out one fold during `train`

    def __post_init__(self):
        if self.spectrum_weight < 0:
            raise ValueError("spectrum_weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.crop_margin < 0:
            raise ValueError("crop_margin must be >= 0")
        if self.data is None and self.data_dir is None:
            raise ValueError("either a synthetic data config or data_dir is required")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "data": None if self.data is None else self.data.to_dict(),
            "data_dir": self.data_dir,
            "graph": self.graph,
            "spectrum_weight": self.spectrum_weight,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "k_folds": self.k_folds,
            "crop_margin": self.crop_margin,
            "eval_fold": self.eval_fold,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        model = ModelConfig.from_dict(doc.pop("model", {}))
        data_doc = doc.pop("data", "unset")
        if data_doc == "unset":
            data = GeneratorConfig()
        elif data_doc is None:
            data = None
        else:
            data = GeneratorConfig.from_dict(data_doc)
        return cls(model=model, data=data, **doc)


def load_train_config(path: str | Path) -> TrainConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return TrainConfig.from_dict(doc)


def save_train_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(cfg: TrainConfig, overrides: list[str]) -> TrainConfig:
    """Apply `a.b=value` strings on top of a config and revalidate."""
    doc = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = doc
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = _coerce(value.strip())
    return TrainConfig.from_dict(doc)
