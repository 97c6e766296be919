"""Pipeline configuration: one flat dataclass, stored as sectioned ``key = value`` text."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from ._io import DataFormatError, atomic_write
from .dataio import LogColumns
from .graphembed import SkipGramConfig
from .ktmodel import ModelConfig, TrainConfig

__all__ = ["PipelineConfig", "load_config", "save_config"]


@dataclass
class PipelineConfig:
    seed: int = 0
    deterministic: bool = True

    # data
    learner_col: str = "learner_id"
    question_col: str = "question_id"
    correct_col: str = "correct"
    timestamp_col: str = "timestamp"
    elapsed_col: str = "elapsed_time"
    timestamp_unit: str = "s"
    delimiter: str = ","
    min_interactions: int = 10
    test_fraction: float = 0.2

    # prerequisite graph
    kg_method: str = "kappa_adj"
    kg_threshold: float = 0.3
    min_support: int = 5
    refine_iterations: int = 1
    method_thresholds: dict = field(default_factory=dict)

    # metapaths and skip-gram
    path_length: int = 7
    walks_per_node: int = 100
    embed_dim: int = 128
    window: int = 1
    negatives: int = 5
    sg_epochs: int = 5
    sg_lr: float = 0.025
    sg_parallel: bool = False

    # question representation
    difficulty_levels: int = 100
    min_attempts: int = 5
    out_dim: int = 256
    fine_tune_embeddings: bool = False

    # knowledge tracing model
    hidden: int = 256
    lam: float = 0.5
    et_cap: float = 500.0
    time_unit: float = 3600.0
    init_decay: float = 0.1
    bias_inside_tanh: bool = False

    # training
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    clip_norm: float = 10.0
    seq_len: int = 200
    early_stop: bool = False
    val_fraction: float = 0.1
    patience: int = 3
    dtype: str = "float32"

    def threshold_for(self, method: str) -> float:
        return float(self.method_thresholds.get(method, self.kg_threshold))

    def log_columns(self) -> LogColumns:
        return LogColumns(
            self.learner_col,
            self.question_col,
            self.correct_col,
            self.timestamp_col,
            self.elapsed_col,
            self.timestamp_unit,
            self.delimiter,
        )

    def skipgram(self) -> SkipGramConfig:
        return SkipGramConfig(
            dim=self.embed_dim,
            window=self.window,
            negatives=self.negatives,
            epochs=self.sg_epochs,
            lr=self.sg_lr,
            seed=self.seed,
            parallel=self.sg_parallel and not self.deterministic,
        )

    def model(self) -> ModelConfig:
        return ModelConfig(
            out_dim=self.out_dim,
            hidden=self.hidden,
            et_cap=self.et_cap,
            lam=self.lam,
            time_unit=self.time_unit,
            init_decay=self.init_decay,
            bias_inside_tanh=self.bias_inside_tanh,
            fine_tune_embeddings=self.fine_tune_embeddings,
        )

    def training(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
            seq_len=self.seq_len,
            seed=self.seed,
            early_stop=self.early_stop,
            val_fraction=self.val_fraction,
            patience=self.patience,
            dtype=self.dtype,
        )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


SECTIONS = {
    "run": ["seed", "deterministic"],
    "data": [
        "learner_col", "question_col", "correct_col", "timestamp_col", "elapsed_col",
        "timestamp_unit", "delimiter", "min_interactions", "test_fraction",
    ],
    "kg": ["kg_method", "kg_threshold", "min_support", "refine_iterations"],
    "embed": ["path_length", "walks_per_node", "embed_dim", "window", "negatives", "sg_epochs", "sg_lr", "sg_parallel"],
    "qrepr": ["difficulty_levels", "min_attempts", "out_dim", "fine_tune_embeddings"],
    "model": ["hidden", "lam", "et_cap", "time_unit", "init_decay", "bias_inside_tanh"],
    "train": ["lr", "epochs", "batch_size", "clip_norm", "seq_len", "early_stop", "val_fraction", "patience", "dtype"],
}
THRESHOLD_SECTION = "kg.thresholds"

_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise DataFormatError(f"config key {key}: {raw!r} is not a boolean")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise DataFormatError(f"config key {key}: {raw!r} is not a {kind}") from None
    return raw


def parse_value(key: str, raw: str):
    if key not in _TYPES or key == "method_thresholds":
        raise DataFormatError(f"unknown config key {key!r}")
    return _coerce(key, raw)


def load_config(path) -> PipelineConfig:
    """Read a sectioned ``key = value`` file; section names are only for grouping."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values: dict = {}
    thresholds: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == THRESHOLD_SECTION:
                try:
                    thresholds[key.lower()] = float(raw)
                except ValueError:
                    raise DataFormatError(f"threshold for {key}: {raw!r} is not a number") from None
            else:
                values[key] = parse_value(key, raw)
    return PipelineConfig(**values, method_thresholds=thresholds)


def save_config(cfg: PipelineConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in SECTIONS.items():
        parser[section] = {k: str(getattr(cfg, k)) for k in keys}
    if cfg.method_thresholds:
        parser[THRESHOLD_SECTION] = {k: repr(float(v)) for k, v in sorted(cfg.method_thresholds.items())}
    with atomic_write(path, encoding="utf-8") as fh:
        parser.write(fh)
