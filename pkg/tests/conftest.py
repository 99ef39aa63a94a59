import sys

import numpy as np
import pytest

from dnlmm.network import build_topology, metropolis_weights
from dnlmm.signals import ContaminatedGaussian, GaussianNoise, NodeSignalProfile

CHAIN = [[1, 1, 0], [1, 1, 1], [0, 1, 1]]


@pytest.fixture
def chain():
    return build_topology("explicit", adjacency=CHAIN)


@pytest.fixture
def chain_weights(chain):
    return metropolis_weights(chain)


@pytest.fixture
def small_net():
    topo = build_topology("random-geometric", 4, seed=3, radius=0.6)
    return topo, metropolis_weights(topo)


@pytest.fixture
def white_profiles():
    return [NodeSignalProfile(0.0, 1.0, GaussianNoise(0.01)) for _ in range(4)]


@pytest.fixture
def cg_profiles():
    rng = np.random.default_rng(5)
    return [NodeSignalProfile(float(t), float(s), ContaminatedGaussian(0.01, float(v), 1e4 * float(v)))
            for t, s, v in zip(rng.uniform(0.2, 0.8, 4), rng.uniform(0.5, 1.5, 4),
                               rng.uniform(0.01, 0.1, 4))]


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(module.LINES.items()):
        terminalreporter.write_line(line)
