"""End-to-end verdicts for the ten frozen acceptance checks.

Every test prints exactly one PASS/FAIL line (written past the capture
plugin so the ledger shows up in any pytest invocation) and asserts the
same condition.  Seeds and tolerances are frozen; margins quoted in
comments were measured on the tuning machine, so the caps leave room
for a few-x slowdown.

Check 2 integrates 10 a.u. of coupled dynamics twice and dominates the
module's wall time at roughly five minutes; check 1 adds ~40 s and
check 8 ~40 s; the rest are seconds.  Run with -s (or just read the
verdict lines) for the live ledger.
"""

import json
import sys
import time

import numpy as np
import pytest
import scipy.fft as _fft

from ksnd import (
    CheckpointChecksumError,
    ExchangeParams,
    Grid,
    NuclearState,
    ProbedConstants,
    SolverSettings,
    TrajectoryRecord,
    accel_bound_probe,
    admissibility_check,
    coupled_step,
    density,
    duhamel_iterate,
    electron_nuclear_accel,
    hartree_potential,
    interaction_energy,
    internuclear_accel,
    lipschitz_probe_combined,
    lipschitz_probe_exchange,
    lipschitz_probe_hartree,
    mve_probe,
    near_vacuum_sweep,
    parse_config,
    propagator_norm_probe,
    read_checkpoint,
    run_simulation,
    sample_coupled_run,
    serialize_config,
    solve_electron,
    solve_nuclear,
    tau_star,
    uniqueness_scaling_probe,
    verlet_nuclear,
    write_checkpoint,
)
from ksnd.analysis import conservation_check, total_energy
from ksnd.cli import main
from ksnd.norms import h2_norm_set, l2_norm

from _oracles import (
    erf_hartree,
    gaussian_hartree_reciprocal,
    periodic_image_correction,
)


_CAPTURE = None


@pytest.fixture(autouse=True)
def _live_ledger(capfd):
    # verdict lines go to the real console even under fd capture
    global _CAPTURE
    _CAPTURE = capfd
    yield
    _CAPTURE = None


def _verdict(num, name, ok, detail):
    line = (f"ACCEPTANCE {num:2d} {name:<24s}"
            f"{'PASS' if ok else 'FAIL'}  {detail}")
    with _CAPTURE.disabled():
        print(line, file=sys.stderr, flush=True)
    assert ok, line


def _packet(grid, center, width=1.0, momentum=0.0):
    x = grid.axis
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2
          + (Z - center[2]) ** 2)
    f = np.exp(-r2 / (4.0 * width ** 2)) * np.exp(1j * momentum * X)
    return f / l2_norm(grid, f)


def _two_protons(vx=0.0):
    return NuclearState(
        positions=[[4.0, 5.0, 5.0], [6.0, 5.0, 5.0]],
        velocities=[[vx, 0.0, 0.0], [-vx, 0.0, 0.0]],
        masses=[1836.15, 1836.15], charges=[1.0, 1.0])


def test_01_unitarity_runtime():
    # measured 37.5 s and drift 1.8e-14 with one fft worker
    grid = Grid(32, 10.0)
    psi0 = _packet(grid, (5.0, 5.0, 5.0), momentum=0.4)[None]
    xp = ExchangeParams(lam=1e-3, q=3.5)
    n_steps = 10_000
    st = SolverSettings(dt=1e-3, window_tau=n_steps * 1e-3)
    path = TrajectoryRecord.ballistic(
        _two_protons(), st.dt * np.arange(n_steps + 1))
    path.diagnostics["template"] = _two_protons()
    with _fft.set_workers(1):
        t0 = time.perf_counter()
        run = solve_electron(grid, psi0, path, xp, st, n_steps=n_steps)
        elapsed = time.perf_counter() - t0
    drift = float(np.max(np.abs(run.orbital_l2 - 1.0)))
    ok = drift <= 1e-10 and elapsed <= 60.0
    _verdict(1, "unitarity 1e4 steps", ok,
             f"32^3 single worker: drift {drift:.2e} (cap 1e-10), "
             f"{elapsed:.1f}s (cap 60s)")


def test_02_conservation_two_rates():
    # measured: rel E drift 9.73e-8, l1 drift 3.6e-13, ratio 4.00
    grid = Grid(32, 10.0)
    xp = ExchangeParams(lam=1e-3, q=3.5, epsilon=2 * grid.spacing)
    psi0 = _packet(grid, (5.0, 5.0, 5.0), momentum=0.4)[None]

    def run(dt, stride):
        samples = {"t": [], "E": [], "l1": [], "ol2": []}

        def obs(t, psi, nuc):
            samples["t"].append(t)
            samples["E"].append(total_energy(grid, psi, nuc, xp))
            samples["l1"].append(float(grid.integrate(density(psi))))
            samples["ol2"].append([l2_norm(grid, f) for f in psi])

        st = SolverSettings(dt=dt, window_tau=0.1, picard_tol=1e-10)
        res = run_simulation(grid, psi0, _two_protons(), xp, st, 10.0,
                             observer=obs, sample_stride=stride)
        rep = conservation_check(samples["t"], samples["E"], samples["l1"],
                                 np.array(samples["ol2"]))
        return rep, res.aborted_window is None

    rep1, done1 = run(1e-3, 100)
    rep2, done2 = run(5e-4, 200)
    rel_e = rep1.energy_drift / abs(rep1.energy_initial)
    rel_l1 = rep1.l1_drift / rep1.l1_initial
    ratio = rep1.energy_drift / rep2.energy_drift
    ok = (done1 and done2 and rel_e <= 1e-4 and rel_l1 <= 1e-10
          and 3.2 <= ratio <= 4.8)
    _verdict(2, "conservation T=10", ok,
             f"rel E drift {rel_e:.2e} (cap 1e-4), rel l1 drift "
             f"{rel_l1:.2e} (cap 1e-10), halved-dt ratio {ratio:.3f} "
             f"(want [3.2, 4.8])")


def test_03_hartree_oracle():
    # The mesh solves the periodic problem in the zero-mean gauge, so
    # the free-space curve erf(r/sqrt2)/r is reached only through the
    # image expansion.  Asserted here: (a) the solver matches an
    # independent reciprocal-space sum of the same periodic problem at
    # the 1e-6 target, and (b) after subtracting the two provable
    # finite-box terms (Wigner constant, quadratic background) the
    # free-space curve is matched to 1e-3.  The raw distance to the
    # uncorrected curve is printed for the record; it is set by the box
    # size, not by the solver.
    grid = Grid(64, 40.0)
    c = 20.0
    x = grid.axis
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    r = np.sqrt((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2)
    rho = np.exp(-r ** 2 / 2.0) / (2.0 * np.pi) ** 1.5
    rho *= 1.0 / grid.integrate(rho)
    v = hartree_potential(grid, rho)

    vref = gaussian_hartree_reciprocal(64, 40.0, 1.0, c, mmax=50)
    vfree = erf_hartree(r)
    vcorr = vfree + periodic_image_correction(r, 40.0)
    ball = r <= 10.0

    # measured 1.2e-8 / 5.1e-4 / 0.67
    rel_oracle = float(np.max(
        (np.abs(v - vref) / np.abs(vref))[ball]))
    rel_corr = float(np.max(np.abs(v - vcorr)[ball])
                     / np.max(np.abs(vfree[ball])))
    rel_raw = float(np.max((np.abs(v - vfree) / vfree)[ball]))
    ok = rel_oracle <= 1e-6 and rel_corr <= 1e-3
    _verdict(3, "hartree oracle 64^3", ok,
             f"vs periodic reciprocal sum {rel_oracle:.2e} (cap 1e-6), "
             f"vs image-corrected erf {rel_corr:.2e} (cap 1e-3), "
             f"raw gap to free-space erf {rel_raw:.2e} (box effect, "
             f"reported only)")


def test_04_force_energy_consistency():
    # measured: worst FD residual 2.1e-7; literal pair accel is exactly
    # half, so the FD force overshoots it by the factor 2.00
    grid = Grid(16, 10.0)
    xp = ExchangeParams(lam=0.5, q=3.5, epsilon=0.1)
    rng = np.random.default_rng(40)
    h = 5e-3
    worst = 0.0
    for trial in range(5):
        m = 2 + trial % 2
        while True:
            pos = rng.uniform(2.0, 8.0, size=(m, 3))
            if all(np.linalg.norm(pos[i] - pos[j]) >= 1.5
                   for i in range(m) for j in range(i + 1, m)):
                break
        nuc = NuclearState(positions=pos, velocities=np.zeros((m, 3)),
                           masses=rng.uniform(1.0, 10.0, m),
                           charges=rng.uniform(0.5, 2.0, m))
        psi = _packet(grid, rng.uniform(3, 7, 3),
                      width=rng.uniform(0.8, 1.5) / np.sqrt(2.0))
        rho = density(psi[None])
        acc = (electron_nuclear_accel(grid, rho, nuc, xp)
               + internuclear_accel(nuc, grid.box_length))
        force = -(nuc.masses[:, None] * acc)
        for k in range(m):
            for comp in range(3):
                def w_at(s):
                    p = nuc.positions.copy()
                    p[k, comp] += s
                    moved = NuclearState(p, nuc.velocities, nuc.masses,
                                         nuc.charges)
                    return interaction_energy(grid, rho, moved, xp)

                fd = (-w_at(2 * h) + 8 * w_at(h) - 8 * w_at(-h)
                      + w_at(-2 * h)) / (12 * h)
                rel = (abs(fd - force[k, comp])
                       / max(np.max(np.abs(force)), 1e-30))
                worst = max(worst, rel)

    pair = _two_protons()
    lit = internuclear_accel(pair, grid.box_length, "paper_literal")
    full = internuclear_accel(pair, grid.box_length, "newton_consistent")
    half = lit[0, 0] / full[0, 0]

    def wnn(s):
        p = pair.positions.copy()
        p[0, 0] += s
        moved = NuclearState(p, pair.velocities, pair.masses, pair.charges)
        return interaction_energy(grid, np.zeros(grid.shape), moved, xp)

    fd_pair = (-wnn(2 * h) + 8 * wnn(h) - 8 * wnn(-h) + wnn(-2 * h)) \
        / (12 * h)
    factor = fd_pair / (-pair.masses[0] * lit[0, 0])
    ok = (worst <= 1e-5 and half == pytest.approx(0.5, abs=1e-12)
          and abs(factor - 2.0) <= 1e-3)
    _verdict(4, "force vs energy grad", ok,
             f"worst FD residual {worst:.2e} (cap 1e-5, "
             f"newton_consistent); paper_literal pair accel ratio "
             f"{half:.6f}, FD force / literal force {factor:.4f} "
             f"(the factor-2 discrepancy, kept as documented)")


def test_05_fixed_point_machinery():
    grid = Grid(16, 10.0)
    xp0 = ExchangeParams(lam=0.0, q=3.5)
    T = 16.0

    # (a) the trapezoid fixed point and velocity-Verlet are one
    # discretisation in two forms, so they must agree to tolerance at
    # every dt; second order is shown against a refined reference.
    # measured: errors 7.68e-6 / 1.92e-6 / 4.73e-7, slopes 2.00 / 2.02
    ref_dt = 6.25e-3
    ref = verlet_nuclear(grid, np.arange(int(round(T / ref_dt)) + 1)
                         * ref_dt, None, _two_protons(0.05), xp0)
    errs, mutual = [], []
    for dt in (0.2, 0.1, 0.05):
        times = np.arange(int(round(T / dt)) + 1) * dt
        v = verlet_nuclear(grid, times, None, _two_protons(0.05), xp0)
        s = solve_nuclear(grid, times, None, _two_protons(0.05), xp0,
                          SolverSettings(dt=dt, window_tau=T,
                                         picard_tol=1e-12,
                                         max_picard_iters=400))
        mutual.append(float(np.max(np.abs(v.positions - s.positions))))
        errs.append(float(np.max(np.abs(
            v.positions[-1] - ref.positions[-1]))))
    slopes = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    ok_a = (max(mutual) <= 1e-9
            and all(1.6 <= s <= 2.4 for s in slopes))

    # (b) integral-form iteration vs split-step, one window
    # measured: gap 3.6e-7 in 6 monotone iterations
    xpe = ExchangeParams(lam=1e-2, q=3.5)
    psi0 = _packet(grid, (5.0, 5.0, 5.0))[None]
    st = SolverSettings(dt=2.5e-3, window_tau=0.05)
    path = TrajectoryRecord.ballistic(
        _two_protons(), st.dt * np.arange(st.steps_per_window + 1))
    path.diagnostics["template"] = _two_protons()
    strang = solve_electron(grid, psi0, path, xpe, st)
    duh = duhamel_iterate(grid, psi0, path, xpe, st)
    gap = float(h2_norm_set(grid, strang.psi - duh.trajectory[-1]))
    monotone = all(b < a for a, b in zip(duh.deltas, duh.deltas[1:]))
    ok_b = gap <= 5e-4 and monotone and duh.converged

    # (c) coupled window on the two-proton setup; measured 2 rounds
    rep = coupled_step(grid, psi0, _two_protons(),
                       ExchangeParams(lam=0.5, q=3.5),
                       SolverSettings(dt=5e-3, window_tau=0.05))
    ok_c = rep.converged and rep.alternations <= 10

    ok = ok_a and ok_b and ok_c
    _verdict(5, "fixed-point machinery", ok,
             f"picard-vs-verlet gap {max(mutual):.1e} (cap 1e-9), "
             f"order slopes {slopes[0]:.2f}/{slopes[1]:.2f} "
             f"(want 2 +- 0.4); duhamel-vs-strang {gap:.2e} "
             f"(cap 5e-4, monotone={monotone}); coupled window "
             f"{rep.alternations} alternations (cap 10)")


def test_06_admissibility_bisection():
    # measured tau* = 4.4e-3 with these seeds
    grid = Grid(16, 10.0)
    xp = ExchangeParams(lam=0.5, q=3.5)
    nuc = _two_protons()
    nuc.velocities[0, 0] = 0.1
    psi0 = _packet(grid, (5.0, 5.0, 5.0))[None]

    pr = propagator_norm_probe(grid, gamma=2.0 * nuc.speed() + 1.0,
                               seed=15)
    acc = accel_bound_probe(grid, nuc, xp, n_samples=200, seed=14)
    lip = lipschitz_probe_combined(grid, xp, n_samples=200, seed=13)
    consts = ProbedConstants(
        amplification_intercept=pr["amplification_intercept"],
        amplification_rate=pr["amplification_rate"],
        accel_c1=acc["c1"], accel_c2=acc["c2"],
        lip_c1=lip.details["difference"]["c1"],
        lip_c2=lip.details["difference"]["c2"],
        provenance={"note": "acceptance seeds 15/14/13"})

    ts = tau_star(grid, psi0, nuc, xp, consts)
    ladder = [admissibility_check(grid, psi0, nuc, xp, f * ts,
                                  consts).admissible
              for f in (1.0, 0.5, 0.1, 1e-3)]
    above = admissibility_check(grid, psi0, nuc, xp, 2.0 * ts,
                                consts).admissible
    tiny = admissibility_check(grid, psi0, nuc, xp, 1e-6,
                               consts).admissible
    ok = ts > 0.0 and all(ladder) and not above and tiny
    _verdict(6, "window admissibility", ok,
             f"tau* {ts:.3e} > 0, admissible at (1, 0.5, 0.1, 1e-3) "
             f"tau* = {ladder}, at 2 tau* = {above} (want False), "
             f"at 1e-6 = {tiny}")


def test_07_inequality_probes():
    # split 500 calibrate / 500 assert with a x2 margin each
    grid = Grid(16, 10.0)
    xp = ExchangeParams(lam=0.5, q=3.5)
    hart = lipschitz_probe_hartree(grid, n_samples=1000, seed=11)
    exch = lipschitz_probe_exchange(grid, xp, n_samples=1000, seed=12)
    comb = lipschitz_probe_combined(grid, xp, n_samples=1000, seed=13)
    mve = mve_probe(grid, alphas=(0.5, 2.5), betas=(1.5, 2.5),
                    n_samples=1000, seed=16)
    reports = [hart, exch, comb] + list(mve.values())
    violations = sum(r.violations for r in reports)
    splits_ok = all(r.n_calibration == 500 and r.n_validation == 500
                    for r in reports)
    # reverse triangle inequality on moduli: constant exactly 1
    sharp = abs(mve["alpha_0.5"].calibration_max - 1.0)
    ok = (violations == 0 and splits_ok and sharp <= 1e-9
          and all(r.passed for r in reports))
    _verdict(7, "inequality probes", ok,
             f"{len(reports)} probes x 500/500 split, "
             f"{violations} violations (want 0), alpha=1/2 constant "
             f"off by {sharp:.1e} (cap 1e-9)")


def test_08_exponent_threshold_contrast():
    # measured growth 11.5 below the threshold, spread 1.20 above it
    shallow = near_vacuum_sweep(4.0 / 3.0)
    steep = near_vacuum_sweep(3.5)
    ok = (shallow["growth"] >= 10.0
          and steep["max_over_min"] < 2.0
          and shallow["density_span"] >= 9.99e3
          and steep["density_span"] >= 9.99e3)
    _verdict(8, "exponent threshold", ok,
             f"q=4/3 ratio growth x{shallow['growth']:.1f} over a "
             f"{shallow['density_span']:.0e} floor sweep (want >= 10); "
             f"q=7/2 max/min {steep['max_over_min']:.3f} (want < 2)")


def test_09_uniqueness_scaling():
    # end gaps scale linearly in s, so h = gap^3 steps x1000 per decade;
    # measured ratios 1000.01 / 999.99
    grid = Grid(16, 10.0)
    xp = ExchangeParams(lam=0.5, q=3.5)
    psi0 = _packet(grid, (5.0, 5.0, 5.0))[None]
    st = SolverSettings(dt=2.5e-3, window_tau=0.05)

    a = sample_coupled_run(grid, psi0, _two_protons(), xp, st, 0.1)
    b = sample_coupled_run(grid, psi0, _two_protons(), xp, st, 0.1)
    bitwise = (all(np.array_equal(x, y)
                   for x, y in zip(a.orbitals, b.orbitals))
               and all(np.array_equal(x, y)
                       for x, y in zip(a.positions, b.positions)))

    out = uniqueness_scaling_probe(grid, psi0, _two_protons(), xp, st,
                                   0.25, scales=(1e-6, 1e-5, 1e-4),
                                   seed=21, power=3)
    # x10 in s with a x2 slack on the gap is [5, 20] per decade, cubed
    ratios_ok = all(125.0 <= r <= 8000.0 for r in out["end_ratios"])
    rates_ok = all(np.isfinite(r) for r in out["rates"].values())
    ok = (bitwise and out["self_h_max"] == 0.0 and ratios_ok
          and rates_ok)
    _verdict(9, "uniqueness scaling", ok,
             f"reruns bit-identical: {bitwise}; self h max "
             f"{out['self_h_max']}; h end ratios per decade "
             f"{[f'{r:.0f}' for r in out['end_ratios']]} "
             f"(want [125, 8000]); growth rates finite: {rates_ok}")


def test_10_io_round_trips(tmp_path):
    cfg_text = """\
grid.n = 16
grid.box_length = 10.0
electrons.count = 1
exchange.lambda = 0.5
exchange.q = 3.5
softening.epsilon = 0.2
time.dt = 0.005
time.window_tau = 0.025
time.total = 0.05
seed = 7

[orbital]
center = 5.0 5.0 5.0
width = 1.0

[nucleus]
mass = 1836.15
charge = 1.0
position = 4.0 5.0 5.0

[nucleus]
mass = 1836.15
charge = 1.0
position = 6.0 5.0 5.0
"""
    canon = serialize_config(parse_config(cfg_text))
    cfg_ok = serialize_config(parse_config(canon)) == canon

    rng = np.random.default_rng(100)
    psi = (rng.standard_normal((2, 8, 8, 8))
           + 1j * rng.standard_normal((2, 8, 8, 8)))
    nuc = NuclearState(rng.uniform(1, 9, (2, 3)),
                       rng.standard_normal((2, 3)),
                       rng.uniform(1, 2000, 2), rng.uniform(0.5, 2, 2))
    snap = tmp_path / "state.ksnd"
    write_checkpoint(snap, 10.0, 0.25, psi, nuc)
    box, t, psi2, nuc2 = read_checkpoint(snap)
    chk_ok = (box == 10.0 and t == 0.25 and np.array_equal(psi, psi2)
              and np.array_equal(nuc.positions, nuc2.positions)
              and np.array_equal(nuc.velocities, nuc2.velocities))

    raw = bytearray(snap.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    bad = tmp_path / "bad.ksnd"
    bad.write_bytes(bytes(raw))
    try:
        read_checkpoint(bad)
        rejected = False
    except CheckpointChecksumError:
        rejected = True

    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(cfg_text)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    ra = main(["--config", str(cfg_path), "--output", str(out_a),
               "simulate"])
    rb = main(["--config", str(cfg_path), "--output", str(out_b),
               "--threads", "2", "simulate"])
    series_ok = (ra == 0 and rb == 0
                 and (out_a / "series.csv").read_bytes()
                 == (out_b / "series.csv").read_bytes()
                 and (out_a / "summary.json").read_bytes()
                 == (out_b / "summary.json").read_bytes())

    ok = cfg_ok and chk_ok and rejected and series_ok
    _verdict(10, "i/o round trips", ok,
             f"config fixed point: {cfg_ok}; checkpoint bit-exact: "
             f"{chk_ok}; corrupted byte rejected: {rejected}; rerun "
             f"CSVs byte-identical across thread counts: {series_ok}")
