import numpy as np
import pytest

from fnpotential.grid import Grid
from fnpotential.pucci import EllipticityPair, OperatorSpec


@pytest.fixture
def laplacian():
    return OperatorSpec.trace(np.eye(2).tolist(), EllipticityPair(1.0, 1.0))


@pytest.fixture
def bellman():
    return OperatorSpec.bellman([np.eye(2).tolist(), [[2.0, 0.0], [0.0, 1.0]]], EllipticityPair(1.0, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def square(cells, half_width=1.0):
    return Grid.square(cells, half_width)
