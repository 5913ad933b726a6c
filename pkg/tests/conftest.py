import numpy as np
import pytest

from qfluct.bath import BathSpec
from qfluct.drive import DriveProtocol

from oracles import Grid


def package_objects(grid: Grid):
    protocol = DriveProtocol(
        kind=grid.kind, omega1_0=grid.omega0, epsilon=grid.epsilon, g=grid.g, t_i=0.0, t_f=grid.t_f
    )
    return protocol, BathSpec(beta=grid.beta, gamma0=grid.gamma0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng) -> np.ndarray:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)
