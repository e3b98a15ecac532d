"""Run configuration: one JSON file drives the whole pipeline.

The schema nests the per-module configs under named keys; any value can be
overridden from the command line with repeated --set dotted.key=value flags
(flags win). Artifact paths are derived from out_dir so a run directory is
self-contained.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .baselines import ColesConfig
from .encoder import ModelConfig
from .pretrain import DistillConfig, MaskingConfig, TrainConfig
from .synthgen import GeneratorConfig
from .util import config_hash

METHODS = ("bert", "distilbert", "coles", "feateng")


@dataclass(frozen=True)
class VocabBuildConfig:
    target_size: int = 8192
    min_frequency: int = 2


@dataclass(frozen=True)
class ProbeRunConfig:
    l2: float = 1e-4
    max_iter: int = 500
    probe_accounts: int = 1200  # learning-curve subsample during pretraining
    curve_tasks: tuple[str, ...] = ("gender",)


@dataclass(frozen=True)
class ColesRunConfig:
    steps: int = 1500
    seed_offset: int = 1  # coles seed = master seed + offset
    config: ColesConfig = field(default_factory=ColesConfig)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    threads: int = 1
    methods: tuple[str, ...] = METHODS
    generator: GeneratorConfig = field(
        default_factory=lambda: GeneratorConfig(n_accounts=1000, seed=0))
    vocab: VocabBuildConfig = field(default_factory=VocabBuildConfig)
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(vocab_size=8192, max_context=128,
                                            d_model=64, n_heads=4, n_layers=4,
                                            d_ff=256))
    student_model: ModelConfig = field(
        default_factory=lambda: ModelConfig(vocab_size=8192, max_context=128,
                                            d_model=64, n_heads=4, n_layers=2,
                                            d_ff=256))
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(total_steps=2000, batch_size=16))
    student_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(total_steps=2000, batch_size=16))
    distill: DistillConfig = field(default_factory=DistillConfig)
    coles: ColesRunConfig = field(default_factory=ColesRunConfig)
    probe: ProbeRunConfig = field(default_factory=ProbeRunConfig)

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods: {sorted(bad)}")
        if self.model.vocab_size != self.vocab.target_size:
            raise ValueError("model.vocab_size must equal vocab.target_size")
        if self.student_model.vocab_size != self.vocab.target_size:
            raise ValueError("student_model.vocab_size must equal vocab.target_size")
        # the master seed governs every stage
        self.generator = dataclasses.replace(self.generator, seed=self.seed)
        self.train = dataclasses.replace(self.train, seed=self.seed)
        self.student_train = dataclasses.replace(self.student_train, seed=self.seed)

    # -- derived artifact paths -------------------------------------------
    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    @property
    def corpus_path(self) -> str:
        return self.path("corpus.jsonl")

    @property
    def labels_path(self) -> str:
        return self.path("labels.jsonl")

    @property
    def vocab_path(self) -> str:
        return self.path("vocab.txt")

    @property
    def teacher_dir(self) -> str:
        return self.path("teacher")

    @property
    def student_dir(self) -> str:
        return self.path("student")

    @property
    def coles_path(self) -> str:
        return self.path("coles.bin")

    def embeddings_path(self, method: str) -> str:
        return self.path("embeddings", f"{method}.bin")

    @property
    def reports_dir(self) -> str:
        return self.path("reports")

    @property
    def scores_path(self) -> str:
        return os.path.join(self.reports_dir, "scores.csv")

    @property
    def summary_path(self) -> str:
        return os.path.join(self.reports_dir, "summary.json")

    # -- (de)serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return _encode(self)

    @property
    def fingerprint(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _decode(cls, d)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _encode(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _encode(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_encode(v) for v in obj]
    return obj


def _decode(cls, data):
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        target = _field_dataclass(f)
        if target is not None and isinstance(value, dict):
            kwargs[f.name] = _decode(target, value)
        elif isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


_FIELD_TYPES = {
    "generator": GeneratorConfig,
    "vocab": VocabBuildConfig,
    "model": ModelConfig,
    "student_model": ModelConfig,
    "train": TrainConfig,
    "student_train": TrainConfig,
    "distill": DistillConfig,
    "coles": ColesRunConfig,
    "config": ColesConfig,
    "probe": ProbeRunConfig,
    "masking": MaskingConfig,
}


def _field_dataclass(f):
    return _FIELD_TYPES.get(f.name)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply --set dotted.key=value pairs on top of a config (flags win)."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ValueError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ValueError(f"unknown config key {key!r}")
        node[leaf] = _parse_override(raw, node[leaf])
    return RunConfig.from_dict(data)


def _parse_override(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return [v for v in raw.split(",") if v]
    return raw
