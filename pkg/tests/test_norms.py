import numpy as np
import pytest

from ksnd import (
    Grid,
    grad_norm_star,
    h1_norm,
    h2_norm,
    h2_norm_set,
    l2_norm,
    l2_norm_set,
    lorentz_quasinorm,
    lorentz_set,
    lq_norm,
    norm_report,
)


@pytest.fixture
def grid():
    return Grid(16, 10.0)


def plane_wave(grid, m):
    x = grid.axis
    k = 2.0 * np.pi * np.asarray(m) / grid.box_length
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    return np.exp(1j * (k[0] * X + k[1] * Y + k[2] * Z)), float(np.sum(k ** 2))


def test_l2_gaussian_analytic(grid):
    # ||exp(-r^2/2)||_2 = pi^(3/4); box large enough that tails vanish
    x = grid.axis
    c = grid.box_length / 2.0
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    f = np.exp(-((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) / 2.0)
    assert l2_norm(grid, f) == pytest.approx(np.pi ** 0.75, rel=1e-10)


def test_h1_h2_plane_wave_weights(grid):
    f, k2 = plane_wave(grid, (2, 1, -1))
    base = l2_norm(grid, f)
    assert h1_norm(grid, f) == pytest.approx(np.sqrt(1 + k2) * base, rel=1e-12)
    # H2 weight is 1 + k^4: no first-order term in this convention
    assert h2_norm(grid, f) == pytest.approx(np.sqrt(1 + k2 ** 2) * base,
                                             rel=1e-12)


def test_h2_set_quadrature_combination(grid):
    f1, _ = plane_wave(grid, (1, 0, 0))
    f2, _ = plane_wave(grid, (0, 3, 0))
    psi = np.stack([f1, 2.0 * f2])
    expect = np.sqrt(h2_norm(grid, f1) ** 2 + h2_norm(grid, 2.0 * f2) ** 2)
    assert h2_norm_set(grid, psi) == pytest.approx(expect, rel=1e-12)
    assert l2_norm_set(grid, psi) == pytest.approx(
        np.sqrt(l2_norm(grid, f1) ** 2 + 4.0 * l2_norm(grid, f2) ** 2),
        rel=1e-12)


def test_lq_norm_indicator(grid):
    rho = np.zeros(grid.shape)
    rho[:4, :4, :4] = 2.0
    measure = 64 * grid.cell_volume
    assert lq_norm(grid, rho, 3.0) == pytest.approx(
        2.0 * measure ** (1.0 / 3.0), rel=1e-12)


def test_grad_norm_star_plane_wave(grid):
    f, k2 = plane_wave(grid, (0, 2, 0))
    g = grad_norm_star(grid, f)
    assert np.max(np.abs(g - np.sqrt(k2))) < 1e-10


def test_lorentz_indicator_exact(grid):
    f = np.zeros(grid.shape)
    f[2:6, 1:5, 3:7] = 3.0
    m = 64 * grid.cell_volume
    assert lorentz_quasinorm(grid, f, 3.0) == pytest.approx(
        3.0 * m ** (1.0 / 3.0), rel=1e-14)


def test_lorentz_scaling_and_p_validation(grid):
    rng = np.random.default_rng(0)
    f = rng.random(grid.shape)
    assert lorentz_quasinorm(grid, 5.0 * f, 3.0) == pytest.approx(
        5.0 * lorentz_quasinorm(grid, f, 3.0), rel=1e-13)
    with pytest.raises(ValueError):
        lorentz_quasinorm(grid, f, 0.0)


def test_lorentz_set_sums_orbitals(grid):
    rng = np.random.default_rng(1)
    a = rng.random(grid.shape)
    b = rng.random(grid.shape)
    s = lorentz_set(grid, np.stack([a, b]), 3.0)
    assert s == pytest.approx(lorentz_quasinorm(grid, a, 3.0)
                              + lorentz_quasinorm(grid, b, 3.0), rel=1e-13)


def test_norm_report_consistency(grid):
    f1, _ = plane_wave(grid, (1, 1, 0))
    psi = np.stack([f1, f1 * 0.5])
    rep = norm_report(grid, psi)
    assert rep.rho_l1 == pytest.approx(float(np.sum(rep.orbital_l2 ** 2)),
                                       rel=1e-12)
    assert rep.set_h2 == pytest.approx(h2_norm_set(grid, psi), rel=1e-12)
