import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from groupsparse.groups import GroupPartition
from groupsparse.objectives import LeastSquaresObjective

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def central_fd(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


@pytest.fixture
def two_groups():
    # groups {0,1},{2,3} used by most worked examples
    return GroupPartition.from_lists([[0, 1], [2, 3]])


@pytest.fixture
def identity_ls(two_groups):
    return LeastSquaresObjective(np.eye(4), np.array([3.0, 0.0, 1.0, 1.0]), two_groups, ridge=0.0)
