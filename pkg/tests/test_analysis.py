"""Energy bookkeeping: breakdown identities and drift summaries."""

import numpy as np
import pytest

from ksnd import (
    EnergyBreakdown,
    ExchangeParams,
    NuclearState,
    SolverSettings,
    conservation_check,
    density,
    run_simulation,
    total_energy,
)
from ksnd.norms import l2_norm, lq_norm

from conftest import gaussian_orbital, two_proton_state


def _empty_nuclei():
    return NuclearState(np.zeros((0, 3)), np.zeros((0, 3)),
                        np.zeros(0), np.zeros(0))


def test_breakdown_total_is_ordered_sum():
    parts = (0.1, 0.2, 0.3, 0.7)
    e = EnergyBreakdown.from_parts(*parts)
    # bit-for-bit, not approx: consumers repeat the left-to-right sum
    assert e.total == ((parts[0] + parts[1]) + parts[2]) + parts[3]


def test_plane_wave_energy_parts(grid16):
    # psi = e^{ikx}/sqrt(V): rho is constant, so the zero-mean Hartree
    # field vanishes and the kinetic part is |k|^2/2 exactly
    vol = grid16.box_length ** 3
    k = 2.0 * np.pi / grid16.box_length
    x = grid16.axis
    X = x[:, None, None] + 0.0 * x[None, :, None] + 0.0 * x[None, None, :]
    psi = (np.exp(1j * k * X) / np.sqrt(vol))[None]
    nuc = _empty_nuclei()
    with pytest.warns(UserWarning, match="below 7/2"):
        xp = ExchangeParams(lam=2.0, q=3.0)
    e = total_energy(grid16, psi, nuc, xp)
    assert e.kinetic == pytest.approx(0.5 * k ** 2, rel=1e-12)
    assert e.interaction == 0.0
    assert abs(e.hartree) < 1e-12
    rho0 = 1.0 / vol
    assert e.exchange == pytest.approx((2.0 / 3.0) * rho0 ** 3 * vol, rel=1e-12)


def test_exchange_term_matches_lq_norm(grid16, ref_xp):
    psi = gaussian_orbital(grid16, (5.0, 5.0, 5.0))[None]
    e = total_energy(grid16, psi, _empty_nuclei(), ref_xp)
    rho = density(psi)
    want = (ref_xp.lam / ref_xp.q) * lq_norm(grid16, rho, ref_xp.q) ** ref_xp.q
    assert e.exchange == pytest.approx(want, rel=1e-13)
    # lam = 0 short-circuits the power integral entirely
    off = total_energy(grid16, psi, _empty_nuclei(),
                       ExchangeParams(lam=0.0, q=ref_xp.q))
    assert off.exchange == 0.0


def test_conservation_check_drifts():
    times = [0.0, 0.1, 0.2]
    energies = [EnergyBreakdown.from_parts(1.0, 0.0, 0.0, 0.0),
                EnergyBreakdown.from_parts(1.0, 0.0, 0.0, 1e-5),
                EnergyBreakdown.from_parts(1.0, 0.0, 0.0, -2e-5)]
    rep = conservation_check(times, energies, [2.0, 2.0, 2.0 + 3e-7],
                             [[1.0], [1.0 + 1e-8], [1.0]])
    assert rep.n_samples == 3
    assert rep.energy_drift == pytest.approx(2e-5)
    assert rep.l1_drift == pytest.approx(3e-7)
    assert rep.orbital_l2_drift == pytest.approx(1e-8)
    assert rep.energy_initial == 1.0
    assert rep.l1_initial == 2.0


def test_conservation_check_rejects_bad_input():
    e = [EnergyBreakdown.from_parts(1.0, 0.0, 0.0, 0.0)] * 2
    with pytest.raises(ValueError, match="two samples"):
        conservation_check([0.0], e[:1], [1.0], [[1.0]])
    with pytest.raises(ValueError, match="length"):
        conservation_check([0.0, 0.1], e, [1.0], [[1.0], [1.0]])


def test_short_coupled_run_conserves(grid16, ref_xp):
    psi0, nuc = two_proton_state(grid16)
    st = SolverSettings(dt=5e-3, window_tau=0.05)
    samples = []

    def watch(t, psi, nuclear):
        e = total_energy(grid16, psi, nuclear, ref_xp)
        rho = density(psi)
        samples.append((t, e, float(grid16.integrate(rho)),
                        [l2_norm(grid16, orb) for orb in psi]))

    run_simulation(grid16, psi0, nuc, ref_xp, st, total_time=0.1,
                   observer=watch, sample_stride=2)
    times, energies, l1s, ol2 = zip(*samples)
    rep = conservation_check(times, energies, l1s, np.array(ol2))
    assert rep.l1_drift < 1e-12
    assert rep.orbital_l2_drift < 1e-12
    # dt^2-scale energy drift for this step size and window
    assert rep.energy_drift < 1e-5 * max(1.0, abs(rep.energy_initial))
