import random

import pytest

from hybridpi.kernel import IntegratorConfig
from hybridpi.simulator import SimConfig


@pytest.fixture
def rng():
    return random.Random(20260823)


def sim_config(horizon: float, step: float = 1e-3, **kw) -> SimConfig:
    return SimConfig(horizon=horizon, integrator=IntegratorConfig(step=step), **kw)
