import numpy as np
import pytest

from trackmarl import arena, kernels

kernels.warmup()


@pytest.fixture
def nav_cfg():
    return arena.TaskConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
