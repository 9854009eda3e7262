import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from apcsim import GridSpec, artificial_effects, generate_dataset, get_case

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def spec10():
    return GridSpec(10, 10)


@pytest.fixture(scope="session")
def case8_data(spec10):
    beta = artificial_effects(get_case(8), spec10)
    return beta, generate_dataset(beta, spec10, seed=1234 + 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
