from typing import Callable

import numpy as np
import pytest

from bench_data import stream_from_config
from config import preset_config

# small enough for a full two-task run in seconds
TINY = {
    "num_tasks": 2,
    "num_classes": 4,
    "labelled_per_task": 8,
    "unlabelled_per_task": 8,
    "val_labelled": 2,
    "test_labelled": 8,
    "synth_per_class": 30,
    "noise_dim": 8,
    "gen_channels": 4,
    "base_epochs": 1,
    "batch_size": 4,
    "num_base_models": 2,
    "ensemble_size": 2,
    "hypernet_epochs": 1,
    "pseudo_models": 2,
    "ft_epochs": 1,
    "buffer_labelled": 4,
    "buffer_unlabelled": 4,
}


@pytest.fixture
def tiny_cfg():
    return preset_config("blobs8", **TINY)


@pytest.fixture
def tiny_stream(tiny_cfg):
    return stream_from_config(tiny_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x.copy())
        x[idx] = orig - h
        down = f(x.copy())
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4, atol: float = 1e-7) -> None:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    assert np.all(err <= atol + rtol * scale), f"max abs err {err.max():.3e}"
