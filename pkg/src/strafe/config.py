"""Run configuration: TOML file parsing with strict key validation."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .model import ModelConfig
from .synthetic import SyntheticConfig
from .training import TrainParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class EmbeddingParams:
    d_e: int = 16
    epochs: int = 3
    negatives_per_positive: int = 5
    lr: float = 0.025
    window_days: int = 90
    vector_scale: float = 1.0


@dataclass
class EvalParams:
    t_r: list[int] = field(default_factory=lambda: [6, 12, 24])
    n_resamples: int = 1000


@dataclass
class DataParams:
    split_ratio: float = 0.8
    split_seed: int = 7


@dataclass
class Paths:
    cohort: str = "cohort.jsonl"
    truth: str = ""            # defaults to "<cohort>.truth.json"
    embeddings: str = "embeddings.ckpt"
    model: str = "model.ckpt"
    out_dir: str = "out"

    def truth_path(self) -> str:
        return self.truth or f"{self.cohort.rsplit('.jsonl', 1)[0]}.truth.json"


@dataclass
class RunConfig:
    seed: int = 0
    cohort: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        d_e=16, n_v=24, heads=2, blocks=1, dropout=0.3, t_max=12))
    embedding: EmbeddingParams = field(default_factory=EmbeddingParams)
    train: TrainParams = field(default_factory=TrainParams)
    eval: EvalParams = field(default_factory=EvalParams)
    data: DataParams = field(default_factory=DataParams)
    paths: Paths = field(default_factory=Paths)

    def validate(self) -> None:
        self.model.validate()
        self.cohort.validate()
        if self.embedding.d_e != self.model.d_e:
            raise ConfigError("embedding d_e must match model d_e")
        if self.embedding.d_e % 2 != 0:
            raise ConfigError("embedding d_e must be even")
        if not 0.0 < self.data.split_ratio < 1.0:
            raise ConfigError("split_ratio must be in (0, 1)")
        if any(t < 1 for t in self.eval.t_r):
            raise ConfigError("evaluation horizons must be >= 1")


def _fill(section_name: str, cls, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section_name}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section_name}] section: {exc}") from exc


_SECTIONS = {
    "cohort": SyntheticConfig,
    "model": ModelConfig,
    "embedding": EmbeddingParams,
    "train": TrainParams,
    "eval": EvalParams,
    "data": DataParams,
    "paths": Paths,
}


def load_run_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file is not valid TOML: {exc}") from exc

    unknown = set(doc) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    cfg = RunConfig(seed=int(doc.get("seed", 0)))
    for name, cls in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"[{name}] must be a section")
            setattr(cfg, name, _fill(name, cls, doc[name]))
    # propagate the global seed into components that take one unless overridden
    if "seed" not in doc.get("cohort", {}):
        cfg.cohort.seed = cfg.seed
    if "seed" not in doc.get("model", {}):
        cfg.model.seed = cfg.seed
    cfg.validate()
    return cfg
