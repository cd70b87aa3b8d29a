import json

import pytest

from bench_data import stream_from_config
from config import (
    PRESETS,
    THREADS_ENV,
    ExperimentConfig,
    load_config,
    preset_config,
    resolve_threads,
)
from errors import ConfigError


def test_defaults_are_the_full_size_settings():
    cfg = ExperimentConfig()
    assert (cfg.num_tasks, cfg.classes_per_task, cfg.num_classes) == (5, 2, 10)
    assert (cfg.labelled_per_task, cfg.unlabelled_per_task) == (500, 1000)
    assert (cfg.num_base_models, cfg.ensemble_size, cfg.pseudo_models) == (5, 15, 5)
    assert cfg.chunk_size == 250
    assert (cfg.buffer_labelled, cfg.buffer_unlabelled) == (120, 240)


def test_preset_applies_before_overrides():
    cfg = preset_config("blobs8", num_tasks=2)
    assert cfg.image_size == PRESETS["blobs8"]["image_size"]
    assert cfg.num_tasks == 2
    assert cfg.latent_dim == ExperimentConfig().latent_dim


def test_unknown_preset_and_key():
    with pytest.raises(ConfigError):
        preset_config("nope")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(None, {"bogus": 1})


@pytest.mark.parametrize(
    "key, value",
    [
        ("num_tasks", "5"),
        ("num_tasks", 2.5),
        ("num_tasks", True),
        ("task_aware", 1),
        ("noise_level", "high"),
        ("data_path", 3),
        ("adam_betas", [0.5]),
    ],
)
def test_type_errors(key, value):
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(**{key: value})


def test_ints_are_accepted_for_floats():
    cfg = ExperimentConfig().replace(ewc_lambda=3, adam_betas=[0, 1])
    assert cfg.ewc_lambda == 3.0 and isinstance(cfg.ewc_lambda, float)
    assert cfg.adam_betas == (0.0, 1.0)


@pytest.mark.parametrize(
    "changes",
    [
        {"num_tasks": 0},
        {"labelled_per_task": -1},
        {"num_tasks": 6},
        {"image_size": 10},
        {"dropout": 1.0},
        {"ewc_lambda": -0.5},
    ],
)
def test_validation(changes):
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(**changes)


def test_zero_budgets_are_allowed():
    cfg = ExperimentConfig().replace(labelled_per_task=0, pseudo_models=0, ft_epochs=0, ewc_lambda=0)
    assert cfg.pseudo_models == 0


def test_dict_round_trip():
    cfg = preset_config("blobs8", seed=11, task_aware=True)
    raw = json.loads(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_dict(raw) == cfg


def test_load_config_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "blobs8", "seed": 3, "num_tasks": 2}), encoding="utf-8")
    cfg = load_config(path, {"seed": 9})
    assert cfg.seed == 9
    assert cfg.num_tasks == 2
    assert cfg.image_size == 8


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listed)


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == 1
    monkeypatch.setenv(THREADS_ENV, "4")
    assert resolve_threads() == 4
    for bad in ("0", "many"):
        monkeypatch.setenv(THREADS_ENV, bad)
        with pytest.raises(ConfigError):
            resolve_threads()


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_builds_its_stream(name):
    cfg = preset_config(name)
    stream = stream_from_config(cfg)
    assert len(stream) == cfg.num_tasks
    for task in stream.tasks:
        assert len(task.train.labelled) == cfg.labelled_per_task
        assert len(task.train.unlabelled) == cfg.unlabelled_per_task
