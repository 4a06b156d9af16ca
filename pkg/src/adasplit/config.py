"""Experiment configuration: YAML file plus dotted-key overrides, validated up front."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .allocator import AllocatorConfig
from .dataio import FORMATS
from .encoder import EncoderConfig
from .reward import RewardConfig
from .synth import SyntheticConfig
from .trainer import TrainConfig

OUTPUT_ROOT_ENV = "ADASPLIT_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    path: str | None = None  # raw log, canonical directory or canonical .tsv
    format: str = "canonical"  # "canonical", "synthetic" or a raw loader format
    min_count: int = 5
    max_len: int | None = None  # keep only the most recent items per user
    collapse_repeats: bool = False
    lastfm_field: str = "artist"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        allowed = ("canonical", "synthetic") + FORMATS
        if self.format not in allowed:
            raise ValueError(f"dataset.format must be one of {allowed}, got {self.format!r}")
        if self.format != "synthetic" and not self.path:
            raise ValueError(f"dataset.path is required for format {self.format!r}")
        if self.min_count < 1:
            raise ValueError("dataset.min_count must be >= 1")


@dataclass
class EvalConfig:
    exclude_history: bool = False
    select_metric: str = "ndcg10"

    def __post_init__(self):
        if self.select_metric not in ("ndcg5", "ndcg10", "mrr5", "mrr10"):
            raise ValueError(f"eval.select_metric {self.select_metric!r} is not a reported metric")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=lambda: DatasetConfig(format="synthetic"))
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    allocator: AllocatorConfig = field(default_factory=AllocatorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str | None = None
    seed: int = 0  # model initialisation; the training shuffle uses train.seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: Any, where: str):
    """Recursively instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        sub = _nested_type(cls, name)
        path = f"{where}.{name}" if where else name
        kwargs[name] = _build(sub, value, path) if sub is not None else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "reward"): RewardConfig,
    (ExperimentConfig, "encoder"): EncoderConfig,
    (ExperimentConfig, "allocator"): AllocatorConfig,
    (ExperimentConfig, "eval"): EvalConfig,
    (DatasetConfig, "synthetic"): SyntheticConfig,
}


def _nested_type(cls, name):
    return _NESTED.get((cls, name))


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value`` with ``value`` parsed as YAML (so numbers, booleans and null work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    keys = [k for k in key.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    return keys, yaml.safe_load(raw)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = dict(data)
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            child = node.get(k)
            child = dict(child) if isinstance(child, dict) else {}
            node[k] = child
            node = child
        node[keys[-1]] = value
    return data


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    data = apply_overrides(data, overrides or [])
    return _build(ExperimentConfig, data, "")


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def make_run_dir(cfg: ExperimentConfig, command: str, now: _dt.datetime | None = None) -> Path:
    """``<root>/<command>-<timestamp>``; root is ``output_dir``, then the env var, then ``./runs``."""
    root = Path(cfg.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs")
    stamp = (now or _dt.datetime.now()).strftime("%Y%m%d-%H%M%S")
    run_dir = root / f"{command}-{stamp}"
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = root / f"{command}-{stamp}-{suffix}"
    run_dir.mkdir(parents=True)
    (run_dir / "config.resolved.yaml").write_text(dump_config(cfg))
    return run_dir
