import numpy as np
import pytest

from ksnd import ExchangeParams, Grid, NuclearState, l2_norm


@pytest.fixture
def grid16():
    return Grid(16, 10.0)


@pytest.fixture
def grid32():
    return Grid(32, 10.0)


def gaussian_orbital(grid, center, width=1.0, momentum=(0.0, 0.0, 0.0)):
    """Unit-L2 Gaussian packet on the mesh."""
    x = grid.axis
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
    phase = momentum[0] * X + momentum[1] * Y + momentum[2] * Z
    f = np.exp(-r2 / (2.0 * width ** 2) + 1j * phase)
    return f / l2_norm(grid, f)


def two_proton_state(grid):
    """Reference setup: two protons straddling a centered orbital."""
    c = grid.box_length / 2.0
    nuclear = NuclearState(
        positions=[[c - 1.0, c, c], [c + 1.0, c, c]],
        velocities=np.zeros((2, 3)),
        masses=[1836.15, 1836.15],
        charges=[1.0, 1.0],
    )
    psi0 = gaussian_orbital(grid, (c, c, c))[None]
    return psi0, nuclear


@pytest.fixture
def ref_xp():
    return ExchangeParams(lam=0.5, q=3.5)


@pytest.fixture
def ref_state(grid16):
    return two_proton_state(grid16)
