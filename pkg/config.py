from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from errors import ConfigError

DEFAULT_OUT_DIR = str(Path(__file__).parent / "runs")
THREADS_ENV = "METACL_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one continual semi-supervised experiment.

    Defaults are the full-size benchmark settings; ``PRESETS`` holds the
    scaled-down ones.
    """

    seed: int = 0
    data_path: str = ""  # SSDS container; empty → synthetic blobs

    # stream
    num_tasks: int = 5
    classes_per_task: int = 2
    num_classes: int = 10
    labelled_per_task: int = 500
    unlabelled_per_task: int = 1000
    val_labelled: int = 20
    val_unlabelled: int = 0
    test_labelled: int = 200
    test_unlabelled: int = 0
    image_size: int = 32
    channels: int = 3
    noise_level: float = 0.3
    synth_per_class: int = 1200

    # Semi-ACGAN
    noise_dim: int = 64
    gen_channels: int = 16
    leaky_slope: float = 0.2
    dropout: float = 0.25
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    prob_eps: float = 1e-7
    base_epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.0002
    adam_betas: tuple[float, float] = (0.5, 0.999)
    shared_init: bool = True

    # hypernetwork
    num_base_models: int = 5
    ensemble_size: int = 15
    chunk_size: int = 250
    latent_dim: int = 10
    encoder_hidden: int = 30
    chunk_embed_dim: int = 8
    hypernet_epochs: int = 5
    hypernet_lr: float = 0.005
    hypernet_init_scale: float = 0.05

    # consolidation
    pseudo_models: int = 5
    consolidation_lr: float = 0.005

    # inference / buffers
    ft_epochs: int = 2
    ft_lr: float = 0.0001
    buffer_labelled: int = 120
    buffer_unlabelled: int = 240
    task_aware: bool = False

    # baselines
    ewc_lambda: float = 100.0

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["adam_betas"] = list(self.adam_betas)
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        return _build(cls(), raw)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return _build(self, changes)


# Desk-scale presets: ~1/10 of the full-size labelled/unlabelled counts on 8x8x1
# synthetic images.  Optimizer rates are raised to match the short schedules.
PRESETS: dict[str, dict[str, Any]] = {
    "blobs8": {
        "num_tasks": 4,
        "classes_per_task": 2,
        "num_classes": 8,
        "labelled_per_task": 100,
        "unlabelled_per_task": 200,
        "val_labelled": 10,
        "test_labelled": 100,
        "image_size": 8,
        "channels": 1,
        "synth_per_class": 300,
        "batch_size": 16,
        "base_lr": 0.002,
        "hypernet_lr": 1.0,
        "consolidation_lr": 1.0,
        "ft_lr": 0.001,
        "buffer_labelled": 12,
        "buffer_unlabelled": 48,
    },
}


def _coerce(name: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{name} must be a list of {len(default)} numbers, got {value!r}")
        return tuple(_coerce(name, d, v) for d, v in zip(default, value))
    raise ConfigError(f"unsupported config field {name}")


def _build(base: ExperimentConfig, raw: Mapping[str, Any]) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = asdict(base)
    for key, value in raw.items():
        values[key] = _coerce(key, getattr(base, key), value)
    cfg = ExperimentConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    positive = (
        "num_tasks", "classes_per_task", "num_classes", "image_size", "channels",
        "noise_dim", "gen_channels", "batch_size", "num_base_models", "ensemble_size",
        "chunk_size", "latent_dim", "encoder_hidden", "chunk_embed_dim", "synth_per_class",
    )
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    non_negative = (
        "labelled_per_task", "unlabelled_per_task", "val_labelled", "val_unlabelled",
        "test_labelled", "test_unlabelled", "base_epochs", "hypernet_epochs",
        "pseudo_models", "ft_epochs", "buffer_labelled", "buffer_unlabelled",
        "ewc_lambda", "noise_level",
    )
    for name in non_negative:
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0, got {getattr(cfg, name)}")
    if cfg.num_tasks * cfg.classes_per_task > cfg.num_classes:
        raise ConfigError(
            f"{cfg.num_tasks} tasks x {cfg.classes_per_task} classes exceed {cfg.num_classes} classes"
        )
    if cfg.image_size % 4:
        raise ConfigError(f"image_size must be a multiple of 4 (two stride-2 convs), got {cfg.image_size}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1), got {cfg.dropout}")


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a JSON config; a ``preset`` key applies before explicit keys."""
    raw: dict[str, Any] = {}
    if path is not None:
        cfg_path = Path(path)
        if not cfg_path.exists():
            raise ConfigError(f"config file {cfg_path} does not exist")
        try:
            raw = json.loads(cfg_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{cfg_path} must hold a JSON object")
    raw = {**raw, **(overrides or {})}

    preset = raw.pop("preset", None)
    base = ExperimentConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
        base = _build(base, PRESETS[preset])
    return _build(base, raw)


def preset_config(name: str, **overrides: Any) -> ExperimentConfig:
    return load_config(None, {"preset": name, **overrides})


def resolve_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return threads
