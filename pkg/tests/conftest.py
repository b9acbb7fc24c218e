import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from se3inv.surface import make_shape

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ellipsoid3():
    return make_shape("ellipsoid", (1.0, 1.3, 1.7), 3)


@pytest.fixture(scope="session")
def sphere3():
    return make_shape("sphere", (1.0,), 3)


def unit_vectors(seed, n):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]
