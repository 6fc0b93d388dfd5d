"""
Shared fixtures for the lab test suite.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from checkpoint_store import Checkpoint  # noqa: E402
from config import TrainConfig  # noqa: E402
from editor_model import init_params  # noqa: E402
from rng_streams import Purpose, stream  # noqa: E402
from synthetic_world import build_world  # noqa: E402

CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the end-to-end acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config():
    """Small dims that keep graph-heavy tests fast."""
    return TrainConfig(num_layers=3, latent_dim=8, num_attributes=2, attributes=("gender", "smile"),
                       image_dim=16, identity_dim=6, batch_size=2, iterations=30, log_every=10)


@pytest.fixture(scope="session")
def desk_config():
    return TrainConfig()


@pytest.fixture(scope="session")
def small_world(small_config):
    return build_world(small_config.world_config())


@pytest.fixture(scope="session")
def desk_world(desk_config):
    return build_world(desk_config.world_config())


@pytest.fixture
def small_checkpoint(small_config, small_world):
    params = init_params(small_config.architecture(), stream(small_config.seed, Purpose.INIT))
    return Checkpoint(config=small_config, world=small_world, params=params)


@pytest.fixture(scope="session")
def trained_desk(desk_config, desk_world):
    """The full desk run shared by the acceptance tests."""
    from trainer import train

    return train(desk_config, desk_world)
