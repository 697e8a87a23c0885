import numpy as np
import pytest
from hypothesis import settings

from oum.mesh import generate_rect_mesh
from oum.problem import DomainPolygon, isotropic_weight, make_problem, rectangular_profile_weight

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

SQUARE = (-1.0, -1.0, 1.0, 1.0)
BIG = (-500.0, -500.0, 500.0, 500.0)


@pytest.fixture(scope="session")
def square_domain():
    return DomainPolygon.rectangle(*SQUARE)


@pytest.fixture(scope="session")
def big_domain():
    return DomainPolygon.rectangle(*BIG)


@pytest.fixture(scope="session")
def iso_problem(square_domain):
    return make_problem(square_domain, isotropic_weight(1.0))


@pytest.fixture(scope="session")
def rect_problem(big_domain):
    return make_problem(big_domain, rectangular_profile_weight(3.0, 1.0))


@pytest.fixture(scope="session")
def small_square_mesh():
    return generate_rect_mesh(SQUARE, 0.2, jitter=0.2, seed=1)


@pytest.fixture(scope="session")
def small_big_mesh():
    return generate_rect_mesh(BIG, 1000 / 16, jitter=0.2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
