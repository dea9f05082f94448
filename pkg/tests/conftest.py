"""
Shared fixtures for the FBNet test suite
"""

import os
import sys

import pytest
import torch

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from config.config import FBNetConfig, HGNetConfig, TrainConfig  # noqa: E402
from src.data import generate_dataset  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run toy training checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: toy-profile training runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_network(**overrides) -> FBNetConfig:
    """Smallest network that still runs every stage: 64-point partials, 128-point output"""
    hgnet = HGNetConfig(
        edgeconv_dims=(8, 16, 32),
        adaptgp_rates=(4, 2),
        k=8,
        fc_dims=(64, 96),
        coarse_size=32,
        seed_size=32,
        pooling=overrides.pop("pooling", "adaptgp"),
    )
    params = dict(
        time_steps=2,
        ratios=(1, 2, 2),
        seed_size=32,
        resolution=128,
        channels=16,
        k=8,
        hgnet=hgnet,
    )
    params.update(overrides)
    return FBNetConfig(**params)


@pytest.fixture
def tiny_cfg() -> FBNetConfig:
    return tiny_network()


@pytest.fixture
def fast_train_cfg() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=2, seed=0, precision="float64", device="cpu")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six shapes, 128-point completes and 64-point partials, all three splits"""
    out_dir = tmp_path_factory.mktemp("tiny_data")
    manifest = generate_dataset(
        str(out_dir),
        num_shapes=6,
        seed=3,
        complete_size=128,
        partial_size=64,
        val_fraction=0.2,
        test_fraction=0.2,
    )
    return manifest


@pytest.fixture
def generator():
    gen = torch.Generator()
    gen.manual_seed(1234)
    return gen
