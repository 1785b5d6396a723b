import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rahtskip.cloud_io import VoxelCloud
from rahtskip.synth import random_cloud, synthetic_cloud

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_cloud(seed, n, depth):
    """Random canonical cloud; n is capped by the grid size."""
    return random_cloud(seed, n, depth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def smooth_cloud():
    return synthetic_cloud(seed=5, depth=6, frequency=1.0)


@pytest.fixture(scope="session")
def small_cloud():
    return make_cloud(7, 600, 5)


@pytest.fixture
def constant_cloud():
    g = np.stack(np.meshgrid(*[np.arange(8)] * 3, indexing="ij"), -1).reshape(-1, 3)
    vox = g[(g.sum(1) % 3) == 0]
    return VoxelCloud(5, vox * 3, np.tile([90, 120, 140], (len(vox), 1))).canonicalize()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
