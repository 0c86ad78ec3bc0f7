"""Sobolev and Lorentz norms on grid fields.

The H2 convention used throughout is

    ||f||_H2^2 = ||f||_L2^2 + ||Lap f||_L2^2

with no first-order term; orbital sets take the l2 combination of the
per-orbital norms.  ||grad psi||_* denotes the pointwise field
sqrt(sum_j |grad psi_j|^2).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

__all__ = [
    "l2_norm",
    "l2_norm_set",
    "h1_norm",
    "h2_norm",
    "h2_norm_set",
    "lq_norm",
    "grad_norm_star",
    "lorentz_quasinorm",
    "lorentz_set",
    "NormReport",
    "norm_report",
]


def l2_norm(grid, f):
    """L2 norm with the cell-volume quadrature weight."""
    f = np.asarray(f)
    return float(np.sqrt(grid.cell_volume * np.vdot(f, f).real))


def l2_norm_set(grid, psi):
    """l2 combination of per-orbital L2 norms; same value as l2_norm."""
    return l2_norm(grid, psi)


def _spectral_weighted(grid, f, weight):
    fh = _fft.fftn(np.asarray(f), axes=(-3, -2, -1))
    scale = grid.cell_volume / grid.n ** 3
    return float(np.sqrt(scale * np.sum(weight * np.abs(fh) ** 2)))


def h1_norm(grid, f):
    """sqrt(||f||^2 + ||grad f||^2), assembled in Fourier space."""
    return _spectral_weighted(grid, f, 1.0 + grid.k2)


def h2_norm(grid, f):
    """sqrt(||f||^2 + ||Lap f||^2), assembled in Fourier space."""
    return _spectral_weighted(grid, f, 1.0 + grid.k2 ** 2)


def h2_norm_set(grid, psi):
    """H2 norm of an orbital set, sqrt(sum_j ||psi_j||_H2^2)."""
    psi = np.asarray(psi)
    if psi.ndim == 3:
        return h2_norm(grid, psi)
    return float(np.sqrt(sum(h2_norm(grid, p) ** 2 for p in psi)))


def lq_norm(grid, rho, q):
    """L^q norm of a nonnegative density."""
    rho = np.asarray(rho)
    return float(grid.integrate(np.abs(rho) ** q) ** (1.0 / q))


def grad_norm_star(grid, psi):
    """Pointwise field sqrt(sum_j |grad psi_j|^2)."""
    psi = np.asarray(psi)
    if psi.ndim == 3:
        psi = psi[None]
    acc = np.zeros(grid.shape)
    for p in psi:
        g = grid.gradient(p)
        acc += np.sum(np.abs(g) ** 2, axis=0)
    return np.sqrt(acc)


def lorentz_quasinorm(grid, f, p):
    """Weak-L^p quasinorm sup_t t^{1/p} f*(t) of a grid field.

    The decreasing rearrangement of a mesh function is a step function
    with steps of width cell_volume; on each step the supremum of
    t^{1/p} f*(t) sits at the right edge of the step, so the quasinorm is
    max_i ((i+1) dV)^{1/p} s_i with s sorted descending.  Exact for
    indicator functions: an indicator of measure m gives m^{1/p}.
    """
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    mags = np.abs(np.asarray(f)).ravel()
    mags = np.sort(mags)[::-1]
    t_right = grid.cell_volume * np.arange(1, mags.size + 1)
    return float(np.max(t_right ** (1.0 / p) * mags))


def lorentz_set(grid, psi, p):
    """Sum of per-orbital weak-L^p quasinorms of an orbital set."""
    psi = np.asarray(psi)
    if psi.ndim == 3:
        psi = psi[None]
    return float(sum(lorentz_quasinorm(grid, f, p) for f in psi))


@dataclass
class NormReport:
    """Per-orbital norms plus density diagnostics for one state."""

    orbital_l2: np.ndarray
    orbital_h2: np.ndarray
    rho_l1: float
    set_l2: float
    set_h2: float
    extras: dict = field(default_factory=dict)


def norm_report(grid, psi):
    psi = np.asarray(psi)
    if psi.ndim == 3:
        psi = psi[None]
    l2s = np.array([l2_norm(grid, f) for f in psi])
    h2s = np.array([h2_norm(grid, f) for f in psi])
    rho = np.sum(np.abs(psi) ** 2, axis=0)
    return NormReport(
        orbital_l2=l2s,
        orbital_h2=h2s,
        rho_l1=float(grid.integrate(rho)),
        set_l2=float(np.sqrt(np.sum(l2s ** 2))),
        set_h2=float(np.sqrt(np.sum(h2s ** 2))),
    )
