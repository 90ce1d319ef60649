"""Run configuration: defaults < JSON config file < command-line overrides.

The file is a single JSON object whose top-level keys are ``seed`` and the
section names below; every key is optional and unknown keys are rejected.
Overrides use dotted paths, e.g. ``--training.max_steps=200``.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    format: str = "csv"
    min_len: int = 60
    T: int = 60
    policy: str = "center_crop"
    test_fraction: float = 0.2
    seed: int | None = None


@dataclass
class ModelSection:
    latent_dim: int = 32
    encoder_channels: list[int] = field(default_factory=lambda: [64, 64])
    decoder_channels: list[int] = field(default_factory=lambda: [64, 64])
    kernel_size: int = 5
    positional_bias: bool = True
    disc_conv_channels: list[int] = field(default_factory=lambda: [64, 128, 128])
    disc_fc_widths: list[int] = field(default_factory=lambda: [64, 1])
    disc_kernel_size: int = 5
    disc_stride: int = 2
    power_iterations: int = 1
    seed: int | None = None


@dataclass
class TrainingSection:
    lambda_adv: float = 1.0
    lambda_rec: float = 10.0
    learning_rate_g: float = 2e-4
    learning_rate_d: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 64
    max_steps: int = 2000
    d_steps_per_g_step: int = 1
    checkpoint_every: int = 500
    ema_decay: float = 0.99
    stop_band: list[float] = field(default_factory=lambda: [0.45, 0.55])
    stop_patience: int = 500
    divergence_threshold: float = 1e6
    seed: int | None = None


@dataclass
class SynthesisSection:
    counts: dict[str, int] | None = None
    multiplier: float = 1.0
    denormalize: bool = True
    format: str = "jsonl"
    seed: int | None = None


@dataclass
class EvaluationSection:
    pca_components: int = 50
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    tsne_max_points: int = 1000
    plots: bool = True
    seed: int | None = None


@dataclass
class ClassifySection:
    kinds: list[str] = field(default_factory=lambda: ["gru", "lstm", "cnn"])
    hidden: int = 128
    channels: list[int] = field(default_factory=lambda: [64, 128, 128])
    layers: int = 2
    kernel_size: int = 5
    stride: int = 2
    dropout: float = 0.3
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    baseline_accuracy: float = 90.13
    seed: int | None = None


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    classify: ClassifySection = field(default_factory=ClassifySection)

    def seed_for(self, section: str) -> int:
        value = getattr(getattr(self, section), "seed")
        return self.seed if value is None else value

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name != "seed"}


def _section_class(name: str):
    return {"data": DataSection, "model": ModelSection, "training": TrainingSection,
            "synthesis": SynthesisSection, "evaluation": EvaluationSection,
            "classify": ClassifySection}[name]


def _check_type(path: str, value: Any, default: Any) -> Any:
    if value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def _apply(cfg: RunConfig, tree: dict, origin: str) -> None:
    if not isinstance(tree, dict):
        raise ConfigError(f"{origin}: configuration must be a JSON object")
    for key, value in tree.items():
        if key == "seed":
            cfg.seed = _check_type("seed", value, 0)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{origin}: section {key!r} must be an object")
        section = getattr(cfg, key)
        names = {f.name for f in dataclasses.fields(section)}
        for sub, v in value.items():
            if sub not in names:
                raise ConfigError(f"{origin}: unknown config key {key}.{sub!r}")
            default = getattr(_section_class(key)(), sub)
            if default is None and sub == "seed":
                default = 0
            setattr(section, sub, _check_type(f"{key}.{sub}", v, default))


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items: list[str]) -> dict:
    """``--section.key=value`` strings into a nested dict (values parsed as JSON when possible)."""
    tree: dict = {}
    for item in items:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognized argument {item!r}; overrides look like --section.key=value")
        path, value = item[2:].split("=", 1)
        parts = path.split(".")
        if len(parts) == 1:
            tree[parts[0]] = _parse_value(value)
        elif len(parts) == 2:
            tree.setdefault(parts[0], {})[parts[1]] = _parse_value(value)
        else:
            raise ConfigError(f"unknown config key {path!r}")
    return tree


def load_config(path=None, overrides: list[str] | dict | None = None) -> RunConfig:
    cfg = RunConfig()
    env_seed = os.environ.get("PGCGAN_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"PGCGAN_SEED must be an integer, got {env_seed!r}") from None
    if path is not None:
        try:
            tree = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        _apply(cfg, tree, str(path))
    if overrides:
        tree = parse_overrides(overrides) if isinstance(overrides, list) else overrides
        _apply(cfg, tree, "command line")
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    d = cfg.data
    if d.format not in ("csv", "jsonl"):
        raise ConfigError(f"data.format must be csv or jsonl, got {d.format!r}")
    if d.policy not in ("center_crop", "resample"):
        raise ConfigError(f"data.policy must be center_crop or resample, got {d.policy!r}")
    if d.min_len < 1 or d.T < 1:
        raise ConfigError("data.min_len and data.T must be >= 1")
    if not 0.0 < d.test_fraction < 1.0:
        raise ConfigError("data.test_fraction must lie in (0, 1)")
    if cfg.model.kernel_size % 2 == 0 or cfg.model.disc_kernel_size % 2 == 0:
        raise ConfigError("kernel sizes must be odd")
    t = cfg.training
    if t.lambda_adv < 0 or t.lambda_rec < 0 or t.lambda_adv + t.lambda_rec <= 0:
        raise ConfigError("training.lambda_adv/lambda_rec must be >= 0 with a positive sum")
    if len(t.stop_band) != 2:
        raise ConfigError("training.stop_band must have two entries")
    if cfg.synthesis.format not in ("csv", "jsonl"):
        raise ConfigError("synthesis.format must be csv or jsonl")
    if cfg.synthesis.counts is not None:
        if not isinstance(cfg.synthesis.counts, dict):
            raise ConfigError("synthesis.counts must be an object of class -> count")
        for k, v in cfg.synthesis.counts.items():
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"synthesis.counts[{k!r}] must be a non-negative integer")
    for k in cfg.classify.kinds:
        if k not in ("gru", "lstm", "cnn"):
            raise ConfigError(f"classify.kinds: unknown classifier {k!r}")
