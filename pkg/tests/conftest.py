"""Shared fixtures."""

import numpy as np
import pytest

from deskrl.config import get_settings
from deskrl.manager.config_manager import ConfigTree
from deskrl.manager.log_manager import make_run_dir


def numeric_grad(f, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar `f()` with respect to every entry of `array`, perturbed in place."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        old = array[idx]
        array[idx] = old + h
        up = f()
        array[idx] = old - h
        down = f()
        array[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def logs_root(tmp_path, monkeypatch):
    """Point every run directory at a temporary logs root."""
    root = tmp_path / "logs"
    monkeypatch.setenv("DESKRL_LOGS_ROOT", str(root))
    get_settings.cache_clear()
    yield root
    get_settings.cache_clear()


def small_tree(agent: dict | None = None, env: dict | None = None, train: dict | None = None, optim: dict | None = None) -> ConfigTree:
    """A fast configuration: tiny networks, short run, frequent evaluation. `env` replaces the whole env table."""
    data = {
        "env": env or {"name": "gridworld", "length": 5},
        "agent": {
            "name": "dqn",
            "hidden": [16],
            "batch_size": 8,
            "buffer_size": 500,
            "start_train_step": 16,
            "target_update_period": 20,
            **(agent or {}),
        },
        "optim": {"name": "adam", "lr": 0.001, **(optim or {})},
        "train": {
            "training": True,
            "load_path": None,
            "run_step": 200,
            "print_period": 100,
            "save_period": 100,
            "eval_iteration": 2,
            "update_period": 4,
            "num_workers": 2,
            "seed": 3,
            **(train or {}),
        },
    }
    return ConfigTree.from_dict(data)


@pytest.fixture
def run_dir(logs_root):
    return make_run_dir("gridworld", "dqn", logs_root=logs_root)
