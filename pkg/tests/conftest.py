"""
Pytest configuration and fixtures for the simulator tests.
"""
import os

import pytest

# Set test environment before the settings module is imported
os.environ["FEDCE_ENV"] = "dev"
os.environ["FEDCE_THREADS"] = "1"

from fedce.core.config import parse_experiment_config  # noqa: E402


@pytest.fixture
def make_config(tmp_path):
    """Factory fixture building validated experiment configs from a few overrides."""

    def _create_config(federation=None, model=None, **overrides):
        data = {
            "federation": {
                "n_clients": 4,
                "samples_per_client": [16, 20, 24, 28],
                "n_features": 4,
                "shift_scale": 0.3,
            },
            "model": {"family": "logistic", "input_dim": 4},
            "rounds": 5,
            "client_lr": 0.5,
            "output_dir": str(tmp_path / "out"),
        }
        if federation:
            data["federation"].update(federation)
        if model:
            data["model"].update(model)
        data.update(overrides)
        return parse_experiment_config(data)

    return _create_config


@pytest.fixture
def toy_config(make_config):
    """Four logistic clients, five rounds."""
    return make_config()


@pytest.fixture
def segmentation_config(make_config):
    """Three pixel_seg clients on a 4x4 grid."""
    return make_config(
        federation={
            "n_clients": 3,
            "samples_per_client": [12, 16, 20],
            "task": "segmentation",
            "grid_size": 4,
        },
        model={"family": "pixel_seg", "input_dim": 16, "grid_size": 4},
        rounds=4,
    )

