"""Shared fixtures: small reference models, grids, and peak sets."""

import numpy as np
import pytest

from logpeaks.ansatz import PeakSet, grid_for
from logpeaks.potential import PotentialModel


@pytest.fixture(scope="session")
def constant_model():
    return PotentialModel(family="constant", params=(1.0,), dim=2)


@pytest.fixture(scope="session")
def quadwell_model():
    """V(x) = 1 + |x|^2 in two dimensions."""
    return PotentialModel(family="quadratic-well", params=(1.0, 0.0, 0.0), dim=2)


@pytest.fixture(scope="session")
def doublewell_model():
    """V(x) = (x1^2 - 1)^2 + x2^2 + 1."""
    return PotentialModel(family="multi-well-polynomial", params=(1.0, 1.0), dim=2)


@pytest.fixture(scope="session")
def origin_peak():
    def make(eps, delta=0.5):
        xi = np.array([[0.0, 0.0]])
        return PeakSet(eps=eps, xi=xi, y=xi.copy(), delta=delta)
    return make


@pytest.fixture(scope="session")
def origin_grid():
    def make(eps, **kw):
        return grid_for([[0.0, 0.0]], eps, 2, **kw)
    return make
