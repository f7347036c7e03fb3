import numpy as np
import pytest

from icsguard.lstm import TrainConfig, train
from icsguard.plant import DEFAULT_INIT, PlantParams, run_episode


@pytest.fixture(scope="session")
def plant_params():
    return PlantParams()


@pytest.fixture(scope="session")
def normal_telemetry(plant_params):
    """2000 steps of noisy normal-operation telemetry as an (n, 11) array."""
    episode = run_episode(DEFAULT_INIT, plant_params, 2000,
                          noise_frac=0.005, seed=11)
    return episode.telemetry_array()


@pytest.fixture(scope="session")
def replay_telemetry(plant_params):
    """Longer normal run an attacker could have recorded for replay."""
    episode = run_episode(DEFAULT_INIT, plant_params, 2600,
                          noise_frac=0.005, seed=21)
    return episode.telemetry_array()


@pytest.fixture(scope="session")
def tiny_lstm(normal_telemetry):
    """A quickly trained model for plumbing tests (not accuracy tests)."""
    cfg = TrainConfig(epochs=2, hidden_dim=8, seed=0)
    return train(normal_telemetry, cfg)
