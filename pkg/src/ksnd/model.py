"""Coupled model: orbitals, point nuclei, potentials, forces, energies.

Hartree atomic units throughout.  The electron Hamiltonian is

    H psi_j = -1/2 Lap psi_j + (v_ext + v_H + v_X) psi_j

with the softened external potential of the point nuclei

    v_ext(r) = - sum_k z_k / sqrt(|r - x_k|^2 + epsilon^2),

the repulsive Hartree potential v_H = rho * 1/|r| (periodic, zero-mean
gauge) and the pure power exchange term v_X = lambda rho^(q-1).
Distances between a nucleus and a mesh point, and between two nuclei,
use the minimum-image convention.

Nuclear accelerations split into the electron pull a1 and the
internuclear repulsion a2.  The default convention derives both from
the gradient of the interaction energy W (Newton's law m a = -grad W);
a variant form carrying an extra 1/2 on the pair term is kept behind
the ``paper_literal`` flag for comparison runs and fails the
force-energy consistency check by that same factor.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .norms import h2_norm, l2_norm
from .grid import _check_field

__all__ = [
    "NuclearState",
    "ExchangeParams",
    "density",
    "external_potential",
    "hartree_potential",
    "exchange_potential",
    "apply_hamiltonian",
    "coulomb_accel_direct",
    "pair_accel",
    "electron_nuclear_accel",
    "internuclear_accel",
    "interaction_energy",
    "force_bound_check",
]

CONVENTIONS = ("newton_consistent", "paper_literal")


def min_image(d, box_length):
    """Wrap displacement(s) into [-L/2, L/2) per component."""
    return d - box_length * np.round(d / box_length)


@dataclass
class NuclearState:
    """Positions, velocities, masses and charges of the point nuclei.

    Arrays are (M, 3), (M, 3), (M,), (M,).  M = 0 is allowed and means
    a purely electronic run.  Positions must be pairwise distinct.
    """

    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    charges: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        self.masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        self.charges = np.atleast_1d(np.asarray(self.charges, dtype=float))
        m = self.count
        if self.positions.shape != (m, 3) or self.velocities.shape != (m, 3):
            raise ValueError("positions and velocities must both be (M, 3)")
        if self.masses.shape != (m,) or self.charges.shape != (m,):
            raise ValueError("masses and charges must both have length M")
        for name in ("positions", "velocities", "masses", "charges"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contain non-finite values")
        if np.any(self.masses <= 0.0):
            raise ValueError("masses must be positive")
        if np.any(self.charges <= 0.0):
            raise ValueError("charges must be positive")
        for k in range(m):
            for l in range(k + 1, m):
                if np.array_equal(self.positions[k], self.positions[l]):
                    raise ValueError(f"nuclei {k} and {l} coincide")

    @property
    def count(self):
        return self.positions.shape[0] if self.positions.size else 0

    def speed(self):
        """Euclidean norm of the stacked velocity vector (R^3M)."""
        return float(np.sqrt(np.sum(self.velocities ** 2)))

    def min_pair_distance(self, box_length):
        """Smallest minimum-image distance between two nuclei; inf if M < 2."""
        m = self.count
        if m < 2:
            return np.inf
        best = np.inf
        for k in range(m):
            d = min_image(self.positions[k + 1:] - self.positions[k], box_length)
            if d.size:
                best = min(best, float(np.min(np.linalg.norm(d, axis=1))))
        return best

    def copy(self):
        return NuclearState(
            self.positions.copy(), self.velocities.copy(),
            self.masses.copy(), self.charges.copy(),
        )


@dataclass(frozen=True)
class ExchangeParams:
    """Exchange coupling lambda, density exponent q and Coulomb softening.

    q must exceed 1.  Exponents below 7/2 are accepted (the dynamics is
    still well defined on the mesh) but the H2 Lipschitz estimates that
    back the fixed-point window selection are only guaranteed from 7/2
    up, so construction emits a warning there.
    """

    lam: float
    q: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if not (np.isfinite(self.q) and self.q > 1.0):
            raise ValueError(f"q must be > 1, got {self.q}")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.q < 3.5:
            warnings.warn(
                f"exchange exponent q={self.q} is below 7/2; the H2 "
                "Lipschitz bounds used for window admissibility are not "
                "guaranteed in this range",
                stacklevel=2,
            )

    @property
    def within_h2_theory(self):
        return self.q >= 3.5


def density(psi):
    """Total density sum_j |psi_j|^2 of an orbital set (N, n, n, n)."""
    psi = np.asarray(psi)
    if psi.ndim == 3:
        psi = psi[None]
    return np.sum(np.abs(psi) ** 2, axis=0)


def external_potential(grid, nuclear, xp):
    """Softened Coulomb attraction of the nuclei on the mesh."""
    out = np.zeros(grid.shape)
    eps2 = xp.epsilon ** 2
    ax = grid.axis
    for xk, zk in zip(nuclear.positions, nuclear.charges):
        dx = min_image(ax - xk[0], grid.box_length)[:, None, None]
        dy = min_image(ax - xk[1], grid.box_length)[None, :, None]
        dz = min_image(ax - xk[2], grid.box_length)[None, None, :]
        out -= zk / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
    return out


def hartree_potential(grid, rho):
    """Repulsive mean-field potential rho * 1/|r|, zero-mean gauge."""
    return grid.poisson_hartree(rho)


def exchange_potential(rho, xp):
    """Pure power exchange v_X = lambda rho^(q-1).

    Tiny negative densities from roundoff (>= -1e-12) are clamped to
    zero before exponentiation; anything more negative is a caller bug.
    """
    rho = np.asarray(rho)
    low = rho.min() if rho.size else 0.0
    if low < -1e-12:
        raise ValueError(f"density has negative values down to {low}")
    if low < 0.0:
        rho = np.maximum(rho, 0.0)
    return xp.lam * rho ** (xp.q - 1.0)


def apply_hamiltonian(grid, psi, nuclear, xp):
    """Assemble v_ext + v_H + v_X from the state and apply H to each orbital."""
    psi = _check_field(grid, np.asarray(psi, dtype=complex), "psi")
    rho = density(psi)
    v = external_potential(grid, nuclear, xp)
    v = v + hartree_potential(grid, rho) + exchange_potential(rho, xp)
    return -0.5 * grid.laplacian(psi) + v * psi


# -- forces ----------------------------------------------------------------


def coulomb_accel_direct(grid, rho, points, charges, masses, xp):
    """Electron pull on each nucleus by direct softened quadrature.

    a1_k = (z_k / m_k) * sum_r rho(r) (r - x_k) / (|r - x_k|^2 + eps^2)^(3/2) dV

    evaluated at the exact points (minimum image).  This is the exact
    gradient of the lattice-sum interaction energy, so it is the route
    the integrators use: forces and energy stay consistent to roundoff.
    """
    rho = np.asarray(rho)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((points.shape[0], 3))
    eps2 = xp.epsilon ** 2
    ax = grid.axis
    for k, xk in enumerate(points):
        dx = min_image(ax - xk[0], grid.box_length)[:, None, None]
        dy = min_image(ax - xk[1], grid.box_length)[None, :, None]
        dz = min_image(ax - xk[2], grid.box_length)[None, None, :]
        w = rho / (dx * dx + dy * dy + dz * dz + eps2) ** 1.5
        out[k, 0] = np.sum(w * dx)
        out[k, 1] = np.sum(w * dy)
        out[k, 2] = np.sum(w * dz)
    out *= grid.cell_volume * (np.asarray(charges) / np.asarray(masses))[:, None]
    return out


def _accel_kernel_hat(grid, xp):
    """rfft of the softened force kernel u/(|u|^2+eps^2)^(3/2), one per axis.

    The cyclic lattice cannot distinguish the offsets +-n/2, so the plane
    |u_c| = L/2 gets the average of the two equidistant images: the odd
    numerator is zeroed there while the even distance is kept.
    """
    ax = min_image(grid.axis, grid.box_length)
    axn = np.where(np.abs(ax) == 0.5 * grid.box_length, 0.0, ax)
    dx = ax[:, None, None]
    dy = ax[None, :, None]
    dz = ax[None, None, :]
    r2 = dx * dx + dy * dy + dz * dz + xp.epsilon ** 2
    if xp.epsilon > 0:
        w = r2 ** -1.5
    else:
        # unsoftened kernel: drop the singular origin sample
        w = np.where(r2 > 0.0, np.where(r2 > 0, r2, 1.0) ** -1.5, 0.0)
    return [
        _fft.rfftn(w * axn[:, None, None]),
        _fft.rfftn(w * axn[None, :, None]),
        _fft.rfftn(w * axn[None, None, :]),
    ]


def coulomb_accel_spectral(grid, rho, points, charges, masses, xp):
    """Same pull as an FFT cross-correlation, interpolated at the points.

    The force field F_c(x) = sum_r rho(r) K_c(r - x) dV is synthesised for
    all x at once (conj(K_hat) rho_hat per component) and read off by
    trilinear interpolation.  At mesh nodes this reproduces the direct
    quadrature up to the plane antipodal to the nucleus (|u_c| = L/2,
    where the direct sum keeps the sign of the unwrapped offset but the
    cyclic kernel averages the two equidistant images), so the routes
    agree to roundoff whenever that plane carries negligible density;
    off-node values carry the interpolation error.
    """
    rho = np.asarray(rho, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rho_hat = _fft.rfftn(rho)
    force = np.empty((3,) + grid.shape)
    for c, k_hat in enumerate(_accel_kernel_hat(grid, xp)):
        force[c] = _fft.irfftn(np.conj(k_hat) * rho_hat, s=grid.shape)
    force *= grid.cell_volume
    out = np.empty((points.shape[0], 3))
    for k, xk in enumerate(points):
        out[k] = grid.interpolate_at(force, xk)
    out *= (np.asarray(charges) / np.asarray(masses))[:, None]
    return out


def electron_nuclear_accel(grid, rho, nuclear, xp, method="direct"):
    """Acceleration of each nucleus due to the electron density.

    method "direct" sums the softened kernel at the exact nuclear
    positions; "spectral" synthesises the whole force field by FFT and
    interpolates.  At mesh nodes the two agree up to the density mass on
    the antipodal plane of each nucleus (see coulomb_accel_spectral).
    """
    if method == "direct":
        return coulomb_accel_direct(
            grid, rho, nuclear.positions, nuclear.charges, nuclear.masses, xp)
    if method == "spectral":
        return coulomb_accel_spectral(
            grid, rho, nuclear.positions, nuclear.charges, nuclear.masses, xp)
    raise ValueError(f"unknown method {method!r}")


def pair_accel(positions, charges, masses, box_length, convention="newton_consistent"):
    """Internuclear Coulomb repulsion accelerations at given positions.

    newton_consistent:  a2_k = (z_k/m_k) sum_{l != k} z_l u_kl / |u_kl|^3
    paper_literal:      the same with an extra factor 1/2

    where u_kl is the minimum-image displacement x_k - x_l.  Only the
    first form matches -grad W / m and conserves the total energy.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown force convention {convention!r}")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    m = positions.shape[0]
    out = np.zeros((m, 3))
    for k in range(m):
        for l in range(m):
            if l == k:
                continue
            u = min_image(positions[k] - positions[l], box_length)
            r = np.linalg.norm(u)
            if r == 0.0:
                raise ValueError(f"nuclei {k} and {l} coincide")
            out[k] += charges[l] * u / r ** 3
        out[k] *= charges[k] / masses[k]
    if convention == "paper_literal":
        out *= 0.5
    return out


def internuclear_accel(nuclear, box_length, convention="newton_consistent"):
    return pair_accel(
        nuclear.positions, nuclear.charges, nuclear.masses, box_length, convention)


def interaction_energy(grid, rho, nuclear, xp):
    """W = <v_ext, rho> + (1/2) sum_{k != l} z_k z_l / |x_k - x_l|.

    The pair sum double counts and carries the compensating 1/2; its
    exact position gradient is -m_k a2_k in the newton_consistent
    convention, and the lattice-sum first term has exact gradient
    -m_k a1_k of the direct quadrature route.
    """
    w = float(grid.integrate(external_potential(grid, nuclear, xp) * rho))
    m = nuclear.count
    for k in range(m):
        for l in range(m):
            if l == k:
                continue
            u = min_image(nuclear.positions[k] - nuclear.positions[l], grid.box_length)
            w += 0.5 * nuclear.charges[k] * nuclear.charges[l] / np.linalg.norm(u)
    return w


# -- force-function bounds -------------------------------------------------


def force_bound_check(grid, psi, charge=1.0, n_points=24, seed=0):
    """Probe the orbital-pair force functions against their norm bounds.

    For each orbital pair (i, j) the force function

        f^{ij}(x) = -z <psi_i, (. - x)/|. - x|^3 psi_j> = -z grad G[psi_i, psi_j](x)

    with G = (conj(psi_i) psi_j) * 1/|r| is evaluated at n_points random
    mesh nodes, together with its Jacobian.  Reported are the ratios

        max |f| / (z ||grad psi_i|| ||grad psi_j||)
        max |Df|_F / (z ||psi_i||_H2 ||psi_j||_H2)

    whose boundedness over state ensembles is what the probe harness
    calibrates.  No constant is baked in here.
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 3:
        psi = psi[None]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, grid.n, size=(n_points, 3))
    kx = grid.k1[:, None, None]
    ky = grid.k1[None, :, None]
    kz = grid.k1[None, None, :]
    kvec = (kx, ky, kz)
    pairs = {}
    for i in range(psi.shape[0]):
        for j in range(i, psi.shape[0]):
            g_hat = _fft.fftn(np.conj(psi[i]) * psi[j])
            with np.errstate(divide="ignore", invalid="ignore"):
                g_hat = np.where(grid.k2 > 0, 4.0 * np.pi * g_hat / np.where(grid.k2 > 0, grid.k2, 1.0), 0.0)
            grad = [_fft.ifftn(1j * kvec[c] * g_hat) for c in range(3)]
            fmag = charge * np.sqrt(sum(np.abs(g) ** 2 for g in grad))
            hess2 = np.zeros(grid.shape)
            for a in range(3):
                for b in range(a, 3):
                    h = _fft.ifftn(-kvec[a] * kvec[b] * g_hat)
                    hess2 += (1.0 if a == b else 2.0) * np.abs(h) ** 2
            dfro = charge * np.sqrt(hess2)
            f_at = fmag[idx[:, 0], idx[:, 1], idx[:, 2]]
            df_at = dfro[idx[:, 0], idx[:, 1], idx[:, 2]]
            gnorm_i = l2_norm(grid, grid.gradient(psi[i]))
            gnorm_j = gnorm_i if j == i else l2_norm(grid, grid.gradient(psi[j]))
            b1 = charge * gnorm_i * gnorm_j
            b2 = charge * h2_norm(grid, psi[i]) * h2_norm(grid, psi[j])
            pairs[(i, j)] = {
                "f_max": float(f_at.max()),
                "df_max": float(df_at.max()),
                "f_ratio": float(f_at.max() / b1) if b1 > 0 else np.inf,
                "df_ratio": float(df_at.max() / b2) if b2 > 0 else np.inf,
            }
    return {
        "pairs": pairs,
        "f_ratio_max": max(p["f_ratio"] for p in pairs.values()),
        "df_ratio_max": max(p["df_ratio"] for p in pairs.values()),
        "n_points": int(n_points),
    }
