"""Model and training configuration.

Config files are YAML (or JSON) with nested sections; the recognised keys are::

    mode: tiny | full
    seed: 0
    loss_network: {weights_path: ...}
    patch: {size: 5, stride: 1}
    graph: {k: 5, metric: ncc}
    deformable: {enabled: true, scales: [3, 5, 7]}
    gnn: {aggregator: gat, heads: 4, intra_enabled: true}
    refine: {enabled: true}
    loss: {lambda: 10}
    train: {iterations: 1000, batch_size: 8, learning_rate: 1.0e-4,
            weight_decay: 5.0e-5, image_size: null}
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

AGGREGATORS = ("gat", "gcn", "gin", "sage", "edgeconv")
METRICS = ("ncc", "euclidean")
MODES = ("tiny", "full")
SEED_ENV = "PGS_SEED"


@dataclass
class ModelConfig:
    mode: str = "tiny"
    tiny_widths: tuple[int, ...] = (8, 16, 32, 64)
    weights_path: str | None = None
    patch_size: int = 5
    stride: int = 1
    k: int = 5
    metric: str = "ncc"
    aggregator: str = "gat"
    heads: int = 4
    head_dim: int | None = None  # None: same as encoder channels
    negative_slope: float = 0.2
    intra_enabled: bool = True
    deformable_enabled: bool = True
    scales: tuple[int, ...] = (3, 5, 7)
    predictor_hidden: int = 64
    refine_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        self.tiny_widths = tuple(int(w) for w in self.tiny_widths)
        self.scales = tuple(int(v) for v in self.scales)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        for name in ("patch_size", "stride", "k", "heads", "predictor_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.scales or any(v < 1 or v % 2 == 0 for v in self.scales):
            raise ConfigError(f"scales must be odd positive side lengths, got {self.scales}")
        if len(self.tiny_widths) != 4:
            raise ConfigError("tiny_widths needs one width per relu level (4 values)")
        if not 0.0 < self.negative_slope < 1.0:
            raise ConfigError("negative_slope must lie in (0, 1)")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def channels(self) -> int:
        """Encoder output channels (relu3_1 width)."""
        return 256 if self.mode == "full" else self.tiny_widths[2]


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    iterations: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    lam: float = 10.0
    seed: int = 0
    image_size: int | None = None  # None: 256 in full mode, 64 in tiny mode

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.lam < 0:
            raise ConfigError("learning_rate must be > 0; weight_decay and lambda >= 0")

    @property
    def crop_size(self) -> int:
        if self.image_size is not None:
            return self.image_size
        return 256 if self.model.mode == "full" else 64

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    return ModelConfig(**{k: v for k, v in d.items() if k in known})


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    model = model_config_from_dict(d.pop("model", {}))
    known = {f.name for f in dataclasses.fields(TrainConfig)} - {"model"}
    return TrainConfig(model=model, **{k: v for k, v in d.items() if k in known})


# (section, key) in the config file -> (target, field)
_FILE_KEYS = {
    ("loss_network", "weights_path"): ("model", "weights_path"),
    ("patch", "size"): ("model", "patch_size"),
    ("patch", "stride"): ("model", "stride"),
    ("graph", "k"): ("model", "k"),
    ("graph", "metric"): ("model", "metric"),
    ("deformable", "enabled"): ("model", "deformable_enabled"),
    ("deformable", "scales"): ("model", "scales"),
    ("gnn", "aggregator"): ("model", "aggregator"),
    ("gnn", "heads"): ("model", "heads"),
    ("gnn", "intra_enabled"): ("model", "intra_enabled"),
    ("refine", "enabled"): ("model", "refine_enabled"),
    ("loss", "lambda"): ("train", "lam"),
    ("train", "iterations"): ("train", "iterations"),
    ("train", "batch_size"): ("train", "batch_size"),
    ("train", "learning_rate"): ("train", "learning_rate"),
    ("train", "weight_decay"): ("train", "weight_decay"),
    ("train", "image_size"): ("train", "image_size"),
}


def load_config(path: str | os.PathLike) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return config_from_nested(raw or {})


def config_from_nested(raw: dict) -> TrainConfig:
    model_kw, train_kw = {}, {}
    for top, value in raw.items():
        if top == "mode":
            model_kw["mode"] = value
        elif top == "seed":
            model_kw["seed"] = train_kw["seed"] = int(value)
        elif isinstance(value, dict):
            for key, v in value.items():
                try:
                    target, name = _FILE_KEYS[(top, key)]
                except KeyError:
                    raise ConfigError(f"unknown config key {top}.{key}") from None
                (model_kw if target == "model" else train_kw)[name] = v
        else:
            raise ConfigError(f"unknown config key {top}")
    return TrainConfig(model=ModelConfig(**model_kw), **train_kw)


def seed_from_env(default: int) -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None
