import os

import numpy as np
import pytest

os.environ.setdefault("LOG_QUIET", "1")

from codedsched.config import RunConfig, SystemConfig  # noqa: E402
from codedsched.env import EdgeEnv, SystemState, make_rng  # noqa: E402


def pytest_collection_modifyitems(config, items):
    if os.getenv("RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def system():
    return SystemConfig()


@pytest.fixture
def run_config():
    return RunConfig()


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def env(system):
    return EdgeEnv(system, seed=11)


@pytest.fixture
def small_system():
    """Three heterogeneous nodes, cheap to enumerate."""
    return SystemConfig(
        num_nodes=3,
        queue_capacity=4,
        arrival_prob=0.5,
        disconnect_probs=(0.1, 0.4, 0.2),
        straggle_rates=(1.0, 0.5, 2.0),
        per_point_seconds=(0.005, 0.01, 0.002),
    )


def make_state(m, f, available):
    return SystemState(queue_count=m, head_task_size=f, node_available=tuple(bool(x) for x in available))


class BanditEnv:
    """Single state, two arms: index 1 pays -1, index 0 (idle) pays -2."""

    action_count = 2

    class _Outcome:
        def __init__(self, reward):
            self.reward = reward

    def state_key(self):
        return (0, 0, 0)

    def observe(self):
        return np.array([1.0, 0.0])

    def mask(self):
        return np.array([True, True])

    def step(self, index):
        return self._Outcome(-1.0 if index == 1 else -2.0)


@pytest.fixture
def bandit():
    return BanditEnv()
