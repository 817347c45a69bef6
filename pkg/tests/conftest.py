import numpy as np
import pytest

from hjhomog.environment import KernelSpec, generate_constant, generate_mollified, \
    generate_periodic


@pytest.fixture(scope="session")
def constant_field():
    return generate_constant(1.0, (-300.0, 300.0), 0.05)


@pytest.fixture(scope="session")
def periodic_field():
    return generate_periodic(2.0, (-300.0, 300.0), 0.05)


@pytest.fixture(scope="session")
def poisson_field():
    return generate_mollified(7, "poisson", 1.0, KernelSpec(), (-300.0, 300.0), 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
