import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# every property suite runs at least 100 generated cases
settings.register_profile("mprim", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mprim")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
