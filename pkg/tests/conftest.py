import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from a2lab.forge import ConstructionParams, build_weight

settings.register_profile("lab", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture(scope="session")
def model16():
    return build_weight(ConstructionParams(Q=16, delta0=1e-3, n_max=4))


@pytest.fixture(scope="session")
def model4():
    return build_weight(ConstructionParams(Q=4, delta0=1e-2, n_max=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
