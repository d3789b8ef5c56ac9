"""Experiment configuration: one versioned YAML document.

Top-level sections mirror the dataclasses below::

    version: 1
    seeds: [0, 1, 2, 3, 4]
    stream_seed: 0
    stream: {num_tasks: 10, d: 32, ...}
    model: {theta1: 0.3, phi: [0.3, 0.2, 0.5], ...}
    ablation: {enable_gonf: true, enable_ama: true, strategy: max_similarity, ...}
    train: {lr: 0.003, epochs: 2, ...}
    sweep: {memory_sizes: [...], alpha_beta_values: [...], ...}
    output: {out_dir: runs, format: both}

Only ``CVQA_OUT_DIR`` and ``CVQA_SEED`` environment variables are honoured;
they override ``output.out_dir`` and ``seeds`` respectively.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .ama import STRATEGIES
from .datagen import StreamConfig
from .decoder import PHI_TOL
from .errors import ConfigInvalid
from .gonf import ENTROPY_SIGNS

log = logging.getLogger(__name__)

CONFIG_VERSION = 1


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, such as ``3e-3``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)
FORMATS = ("json", "csv", "both")
SWEEP_AXES = ("memory_size", "strategy", "alpha_beta")


@dataclass
class ModelConfig:
    d_e: int = 32
    d_att: int = 32
    dae_hidden: int | None = None
    dae_noise: float = 0.1
    theta1: float = 0.3
    theta2: float = 0.1
    theta3: float = 0.1
    phi: tuple[float, float, float] = (0.3, 0.2, 0.5)
    lam: float = 0.9
    k: int = 3
    pool_capacity: int = 50
    sim_threshold: float = 0.7
    entropy_sign: str = "as_printed"


@dataclass
class AblationConfig:
    enable_gonf: bool = True
    enable_ama: bool = True
    strategy: str = "max_similarity"
    buffer_capacity: int = 200
    alpha_beta: tuple[float, float] | None = None


@dataclass
class TrainConfig:
    lr: float = 3e-3
    epochs: int = 2
    clip_norm: float = 5.0
    warmup_ratio: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class SweepConfig:
    memory_sizes: list[int] | None = None
    memory_base: tuple[int, ...] = (50, 100, 500, 1000, 5000)
    memory_scale: float = 0.04
    alpha_beta_values: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    strategies: tuple[str, ...] = ("random", "max_similarity")

    def resolved_memory_sizes(self) -> list[int]:
        if self.memory_sizes is not None:
            return list(self.memory_sizes)
        return [max(1, round(m * self.memory_scale)) for m in self.memory_base]


@dataclass
class OutputConfig:
    out_dir: str = "runs"
    format: str = "both"


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    stream_seed: int = 0
    stream: StreamConfig = field(default_factory=StreamConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigInvalid(f"unsupported config version {self.version}", field="version")
        if not self.seeds:
            raise ConfigInvalid("at least one seed is required", field="seeds")
        self.stream.validate()
        m, a, t = self.model, self.ablation, self.train
        phi = m.phi
        if len(phi) != 3 or any(p < 0 for p in phi) or abs(sum(phi) - 1.0) > PHI_TOL:
            raise ConfigInvalid(f"phi={list(phi)} violates the simplex constraint "
                                "(non-negative, summing to 1)", field="model.phi")
        for name in ("d_e", "d_att", "k", "pool_capacity"):
            if getattr(m, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1", field=f"model.{name}")
        if m.dae_hidden is not None and m.dae_hidden < 1:
            raise ConfigInvalid("dae_hidden must be >= 1", field="model.dae_hidden")
        if not 0.0 <= m.lam <= 1.0:
            raise ConfigInvalid("lam must lie in [0, 1]", field="model.lam")
        if not 0.0 < m.sim_threshold <= 1.0:
            raise ConfigInvalid("sim_threshold must lie in (0, 1]", field="model.sim_threshold")
        if m.entropy_sign not in ENTROPY_SIGNS:
            raise ConfigInvalid(f"entropy_sign must be one of {ENTROPY_SIGNS}", field="model.entropy_sign")
        for name in ("theta1", "theta2", "theta3", "dae_noise"):
            if getattr(m, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0", field=f"model.{name}")
        if not 0.1 <= m.theta1 <= 0.5:
            log.warning("theta1=%s lies outside the usual range [0.1, 0.5]", m.theta1)
        if a.strategy not in STRATEGIES:
            raise ConfigInvalid(f"strategy must be one of {STRATEGIES}", field="ablation.strategy")
        if a.buffer_capacity < 0:
            raise ConfigInvalid("buffer_capacity must be >= 0", field="ablation.buffer_capacity")
        if a.alpha_beta is not None and len(a.alpha_beta) != 2:
            raise ConfigInvalid("alpha_beta must be a pair", field="ablation.alpha_beta")
        if t.lr < 0 or t.epochs < 0 or t.clip_norm <= 0 or not 0 <= t.warmup_ratio <= 1:
            raise ConfigInvalid("invalid optimiser settings", field="train")
        if self.output.format not in FORMATS:
            raise ConfigInvalid(f"format must be one of {FORMATS}", field="output.format")
        for s in self.sweep.strategies:
            if s not in STRATEGIES:
                raise ConfigInvalid(f"unknown sweep strategy {s!r}", field="sweep.strategies")

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        """Short digest of everything that affects results (not seeds or outputs)."""
        data = self.to_dict()
        for key in ("seeds", "output", "sweep"):
            data.pop(key)
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_SECTIONS = {
    "stream": StreamConfig,
    "model": ModelConfig,
    "ablation": AblationConfig,
    "train": TrainConfig,
    "sweep": SweepConfig,
    "output": OutputConfig,
}
_TUPLE_FIELDS = {("model", "phi"), ("ablation", "alpha_beta"), ("sweep", "memory_base"),
                 ("sweep", "alpha_beta_values"), ("sweep", "strategies")}


def _build_section(name: str, cls, raw) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"section {name!r} must be a mapping", field=name)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigInvalid(f"unknown key {key!r} in section {name!r}", field=f"{name}.{key}")
    values = {}
    for key, val in raw.items():
        if (name, key) in _TUPLE_FIELDS and val is not None:
            if not isinstance(val, (list, tuple)):
                raise ConfigInvalid(f"{name}.{key} must be a list", field=f"{name}.{key}")
            val = tuple(val)
        values[key] = val
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigInvalid(str(exc), field=name) from exc


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a mapping", field="<root>")
    known = {"version", "seeds", "stream_seed", *_SECTIONS}
    unknown = set(data) - known
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigInvalid(f"unknown top-level key {key!r}", field=key)
    sections = {name: _build_section(name, cls, data.get(name)) for name, cls in _SECTIONS.items()}
    seeds = data.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigInvalid("seeds must be a list of integers", field="seeds")
    cfg = ExperimentConfig(
        version=data.get("version", CONFIG_VERSION),
        seeds=list(seeds),
        stream_seed=int(data.get("stream_seed", 0)),
        **sections,
    )
    _check_types(cfg)
    cfg.validate()
    return cfg


def _check_types(cfg: ExperimentConfig) -> None:
    for name in _SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            val = getattr(section, f.name)
            default = f.default if f.default is not dataclasses.MISSING else None
            if isinstance(default, bool) and not isinstance(val, bool):
                raise ConfigInvalid(f"{name}.{f.name} must be a boolean", field=f"{name}.{f.name}")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigInvalid(f"{name}.{f.name} must be a number", field=f"{name}.{f.name}")
                if isinstance(default, int) and not isinstance(val, int):
                    raise ConfigInvalid(f"{name}.{f.name} must be an integer", field=f"{name}.{f.name}")


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config is not valid YAML: {exc}", field="<root>") from exc
    return from_dict(data or {})


def load(path: str | Path, env: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = loads(Path(path).read_text())
    return apply_env(cfg, os.environ if env is None else env)


def apply_env(cfg: ExperimentConfig, env) -> ExperimentConfig:
    if env.get("CVQA_OUT_DIR"):
        cfg.output.out_dir = env["CVQA_OUT_DIR"]
    if env.get("CVQA_SEED"):
        try:
            cfg.seeds = [int(env["CVQA_SEED"])]
        except ValueError:
            raise ConfigInvalid("CVQA_SEED must be an integer", field="seeds") from None
    return cfg
