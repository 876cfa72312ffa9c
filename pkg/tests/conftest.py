import numpy as np
import pytest

from icilearn.config import build_scenario, load_config, set_path
from icilearn.oracle import OracleModel, relative_value_iteration


def tiny_config(**changes) -> dict:
    """Example-1 config with optional ``{"section.key": value}`` edits."""
    cfg = load_config("example1.cfg")
    for key, value in changes.items():
        cfg = set_path(cfg, key.replace("__", "."), value)
    return cfg


@pytest.fixture(scope="session")
def example_cfg():
    return load_config("example1.cfg")


@pytest.fixture(scope="session")
def example_scenario(example_cfg):
    return build_scenario(example_cfg)


@pytest.fixture(scope="session")
def example_oracle(example_scenario):
    model = OracleModel(example_scenario)
    table, policy = relative_value_iteration(model)
    return model, table, policy


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
