"""Energy bookkeeping and conservation checks.

The total energy splits into four pieces:

    kinetic      (1/2) sum_k m_k |v_k|^2 + (1/2) sum_j ||grad psi_j||^2
    interaction  <v_ext, rho> + (1/2) sum_{k != l} z_k z_l / |x_k - x_l|
    hartree      (1/2) int rho v_H[rho]
    exchange     (lambda / q) int rho^q

and the reported total is the left-to-right float sum of the four, so
total == kinetic + interaction + hartree + exchange holds bit for bit
for any consumer that repeats the sum in that order.  Both the total
and the particle number are conserved by the continuous flow; the
splitting integrator preserves the particle number to roundoff and the
energy to O(dt^2), which is what ``conservation_check`` quantifies.
"""

from dataclasses import dataclass

import numpy as np

from .model import interaction_energy, density, hartree_potential
from .norms import l2_norm, lq_norm

__all__ = [
    "EnergyBreakdown",
    "ConservationReport",
    "total_energy",
    "conservation_check",
]


@dataclass
class EnergyBreakdown:
    """One energy sample; ``total`` is the ordered sum of the parts."""

    kinetic: float
    interaction: float
    hartree: float
    exchange: float
    total: float

    @classmethod
    def from_parts(cls, kinetic, interaction, hartree, exchange):
        return cls(kinetic=kinetic, interaction=interaction, hartree=hartree,
                   exchange=exchange,
                   total=kinetic + interaction + hartree + exchange)


def total_energy(grid, psi, nuclear, xp):
    """Energy of one configuration, split into its four parts."""
    psi = np.asarray(psi, dtype=complex)
    kin = 0.5 * float(np.sum(nuclear.masses * np.sum(nuclear.velocities ** 2, axis=1)))
    for orb in psi:
        gx, gy, gz = grid.gradient(orb)
        kin += 0.5 * (l2_norm(grid, gx) ** 2 + l2_norm(grid, gy) ** 2
                      + l2_norm(grid, gz) ** 2)
    rho = density(psi)
    inter = interaction_energy(grid, rho, nuclear, xp)
    har = 0.5 * float(grid.integrate(rho * hartree_potential(grid, rho)))
    exch = 0.0
    if xp.lam != 0.0:
        exch = (xp.lam / xp.q) * lq_norm(grid, rho, xp.q) ** xp.q
    return EnergyBreakdown.from_parts(kin, inter, har, exch)


@dataclass
class ConservationReport:
    """Drift of the conserved quantities over a sampled run."""

    n_samples: int
    energy_drift: float       # max |E(t) - E(0)|
    l1_drift: float           # max |  ||rho||_1(t) - ||rho||_1(0) |
    orbital_l2_drift: float   # max over orbitals and times
    energy_initial: float
    l1_initial: float


def conservation_check(times, energies, rho_l1, orbital_l2):
    """Summarise drift over a time series of samples.

    times       sample times, length >= 2
    energies    EnergyBreakdown per sample
    rho_l1      particle number per sample
    orbital_l2  per-orbital norms, shape (n_samples, N)
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("conservation needs at least two samples")
    if not (len(energies) == times.size == len(rho_l1)):
        raise ValueError("sample arrays disagree in length")
    totals = np.array([e.total for e in energies])
    l1 = np.asarray(rho_l1, dtype=float)
    ol2 = np.atleast_2d(np.asarray(orbital_l2, dtype=float))
    return ConservationReport(
        n_samples=times.size,
        energy_drift=float(np.max(np.abs(totals - totals[0]))),
        l1_drift=float(np.max(np.abs(l1 - l1[0]))),
        orbital_l2_drift=float(np.max(np.abs(ol2 - ol2[0]))),
        energy_initial=float(totals[0]),
        l1_initial=float(l1[0]),
    )
