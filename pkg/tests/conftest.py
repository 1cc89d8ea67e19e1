import numpy as np
import pytest
from hypothesis import settings

from subflow import ControlSystem, Control, CostParams, make_heisenberg, make_linear, make_quadratic_cost

# compiled kernels load lazily, so the first example of a property can be slow
settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def make_rot():
    """Nonlinear two-field test system: F^0 = (1, x y), F^1 = (-y, x)."""
    terms = ((0, 0, 1.0, (0, 0)), (1, 0, 1.0, (1, 1)), (0, 1, -1.0, (0, 1)), (1, 1, 1.0, (1, 0)))
    return ControlSystem("rot", 2, 2, terms)


def circle_control(N, z=0.1):
    """One full turn of the circle enclosing area ``z``; the optimal loop for height ``z``."""
    c = np.sqrt(4 * np.pi * abs(z))
    return Control.from_function(lambda s: c * np.c_[np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)], N)


@pytest.fixture
def heis():
    return make_heisenberg()


@pytest.fixture
def rot():
    return make_rot()


@pytest.fixture
def scalar():
    """Scalar benchmark: dx/ds = u, x0 = 1, a = x^2 / 2, beta = 1."""
    return make_linear([[1.0]]), make_quadratic_cost([0.0]), CostParams(1.0, [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (system factory, x0, target) triples used for cross-system checks
BENCHMARKS = {
    "heisenberg": (make_heisenberg, [0.0, 0.0, 0.0], [0.1, 0.2, 0.3]),
    "rot": (make_rot, [0.3, -0.2], [0.5, 0.4]),
    "linear": (lambda: make_linear([[1.0, 0.5], [0.0, 2.0], [1.0, -1.0]]), [1.0, 0.0, -1.0], [0.0, 0.5, 0.0]),
}
