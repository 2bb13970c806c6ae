# tests/conftest.py

import numpy as np
import pytest

from src.model import ChannelSet, ClusterConfig, Dimensions, PowerConstraintSet, Scenario


def build_example1() -> Scenario:
    """One two-antenna transmitter, one terminal with h = [1, 0], unit per-antenna limits."""
    dims = Dimensions(1, (2,), 1, 1)
    chans = ChannelSet.from_blocks(dims, {(0, 0, 0): [1.0, 0.0]})
    return Scenario.create(dims, chans, ClusterConfig.network_mimo(1, 1),
                           PowerConstraintSet.per_antenna(dims, 1.0))


def build_example2() -> Scenario:
    """Two-user SISO interference channel with cross gains 0.1 and 0.5, limits 20, unit noise."""
    dims = Dimensions(2, (1, 1), 2, 1)
    chans = ChannelSet.from_blocks(dims, {
        (0, 0, 0): [1.0],
        (1, 0, 0): [np.sqrt(0.1)],
        (0, 1, 0): [np.sqrt(0.5)],
        (1, 1, 0): [1.0],
    })
    return Scenario.create(dims, chans, ClusterConfig.interference_channel(2),
                           PowerConstraintSet.per_transmitter(dims, 20.0))


def build_random(seed: int, num_tx: int = 2, antennas: int = 2, num_rx: int = 3, num_sc: int = 1,
                 budget: float = 1.0, clusters: str = "network_mimo", noise: float = 1.0) -> Scenario:
    rng = np.random.default_rng(seed)
    dims = Dimensions(num_tx, (antennas,) * num_tx, num_rx, num_sc)
    shape = (num_rx, num_sc, dims.total_antennas)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    chans = ChannelSet(dims, h, noise)
    if clusters == "network_mimo":
        config = ClusterConfig.network_mimo(num_tx, num_rx)
    else:
        config = ClusterConfig.from_serving([k % num_tx for k in range(num_rx)], num_tx,
                                            coordinate_all=clusters == "coordinated")
    return Scenario.create(dims, chans, config, PowerConstraintSet.per_transmitter(dims, budget))


@pytest.fixture
def example1() -> Scenario:
    return build_example1()


@pytest.fixture
def example2() -> Scenario:
    return build_example2()


@pytest.fixture
def random_scenario():
    return build_random
