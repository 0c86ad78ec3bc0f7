"""Batch front end: simulate, probe, check-admissibility, oracle-compare.

Exit codes, kept stable for scripting:

    0  success
    1  oracle-compare mismatch, or a probe whose verdict failed
    2  configuration problem (parse errors, bad values, usage)
    3  solver failure (non-convergence or non-finite state)
    4  feasibility/admissibility violation
    5  I/O failure

``simulate`` writes ``series.csv`` (schema line ``# ksnd-series v1``;
columns: time, E, T, W, U, E_X, rho_l1, per-orbital L2, then per
nucleus x y z vx vy vz) and ``summary.json`` into the output directory.
Floats are printed with ``repr``, which is shortest-round-trip, so
reruns of the same config are byte-identical.  E is always the
left-to-right sum T + W + U + E_X of the other columns.

``probe`` dispatches to the estimate probes and writes one JSON report;
``check-admissibility`` measures the needed constants on the configured
mesh and evaluates both window conditions at time.window_tau;
``oracle-compare`` rebuilds a closed-form reference inside this module
(deliberately separate from any library code it is checking) and
compares against the solvers.
"""

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np
import scipy.fft as _fft

from . import probes
from .analysis import conservation_check, total_energy
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .config import (
    ConfigError,
    initial_orbitals,
    make_exchange,
    make_grid,
    make_nuclear,
    make_settings,
    parse_config,
)
from .dynamics import NonFiniteStateError, run_simulation
from .grid import Grid
from .model import density
from .norms import l2_norm, lorentz_quasinorm

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_FEASIBILITY = 4
EXIT_IO = 5

PROBE_NAMES = ("hartree", "exchange", "exchange-threshold", "combined",
               "mve", "propagator", "accel", "uniqueness")
ORACLE_CASES = ("hartree-gaussian", "free-spread", "lorentz-coulomb")


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args):
    if not args.config:
        raise ConfigError([(0, "--config is required for this command")])
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        raise _IOFailure(f"cannot read config: {exc}") from exc
    cfg = parse_config(text)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output is not None:
        cfg.output_dir = args.output
    return cfg


class _IOFailure(Exception):
    pass


def _initial_state(cfg, grid):
    if cfg.initial == "file":
        box, _, psi, _ = read_checkpoint(cfg.orbital_file)
        if psi.shape != (cfg.n_orbitals, cfg.n, cfg.n, cfg.n):
            raise ConfigError([(0, f"checkpoint orbitals {psi.shape} do not "
                                   f"match the configured run")])
        if abs(box - cfg.box_length) > 1e-12:
            raise ConfigError([(0, "checkpoint box length does not match")])
        return psi
    return initial_orbitals(cfg, grid)


def cmd_simulate(args):
    cfg = _load_config(args)
    grid = make_grid(cfg)
    xp = make_exchange(cfg)
    nuclear = make_nuclear(cfg)
    settings = make_settings(cfg)
    psi0 = _initial_state(cfg, grid)

    n_total = int(round(cfg.total_time / cfg.dt))
    spw = settings.steps_per_window
    stride = cfg.output_stride
    rows = []
    breakdowns = []
    os.makedirs(cfg.output_dir, exist_ok=True)

    def observer(t, psi, nuc):
        step = int(round(t / cfg.dt))
        if args.checkpoints and step % spw == 0:
            write_checkpoint(
                os.path.join(cfg.output_dir, f"state_{step:08d}.ksnd"),
                cfg.box_length, t, psi, nuc)
        if stride and step % stride != 0 and step != n_total:
            return
        bk = total_energy(grid, psi, nuc, xp)
        breakdowns.append(bk)
        row = [t, bk.total, bk.kinetic, bk.interaction, bk.hartree,
               bk.exchange, grid.integrate(density(psi))]
        row += [l2_norm(grid, f) for f in psi]
        for k in range(nuc.count):
            row += list(nuc.positions[k]) + list(nuc.velocities[k])
        rows.append(row)

    try:
        result = run_simulation(
            grid, psi0, nuclear, xp, settings, cfg.total_time,
            convention=cfg.convention, observer=observer,
            sample_stride=stride if stride else spw)
    except NonFiniteStateError as exc:
        print(f"solver produced a non-finite state at step {exc.step}",
              file=sys.stderr)
        return EXIT_SOLVER

    bad = [r for r in rows if not all(math.isfinite(v) for v in r)]
    if bad:
        print(f"non-finite values in {len(bad)} output rows; not writing "
              f"series", file=sys.stderr)
        return EXIT_SOLVER

    header = ["time", "E", "T", "W", "U", "E_X", "rho_l1"]
    header += [f"orb_l2_{j + 1}" for j in range(cfg.n_orbitals)]
    for k in range(nuclear.count):
        header += [f"nuc{k + 1}_{c}" for c in ("x", "y", "z", "vx", "vy", "vz")]
    lines = ["# ksnd-series v1", ",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    with open(os.path.join(cfg.output_dir, "series.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    times = [r[0] for r in rows]
    cons = conservation_check(
        times, breakdowns, [r[6] for r in rows],
        np.array([r[7:7 + cfg.n_orbitals] for r in rows]))
    summary = {
        "schema": "ksnd-summary v1",
        "samples": len(rows),
        "time_reached": result.time,
        "aborted_window": result.aborted_window,
        "drifts": {
            "energy": cons.energy_drift,
            "rho_l1": cons.l1_drift,
            "orbital_l2": cons.orbital_l2_drift,
        },
        "energy_initial": cons.energy_initial,
        "picard": {
            "max_alternations": max((w["alternations"] for w in result.windows),
                                    default=0),
            "all_converged": all(w["converged"] for w in result.windows),
        },
        "feasibility": [w["feasibility_exit_time"] for w in result.windows],
        "windows": result.windows,
    }
    _write_json(os.path.join(cfg.output_dir, "summary.json"), summary)

    if result.aborted_window is not None:
        print(f"window {result.aborted_window} failed to converge; report in "
              f"summary.json", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _parse_float_list(text):
    return tuple(float(p) for p in text.split(",") if p.strip())


def cmd_probe(args):
    cfg = _load_config(args)
    grid = make_grid(cfg)
    xp = make_exchange(cfg)
    nuclear = make_nuclear(cfg)
    name = args.name
    n_samples = args.samples

    if name == "hartree":
        report = probes.lipschitz_probe_hartree(
            grid, n_samples=n_samples, seed=cfg.seed)
    elif name == "exchange":
        report = probes.lipschitz_probe_exchange(
            grid, xp, n_samples=n_samples, seed=cfg.seed)
    elif name == "exchange-threshold":
        sweep = probes.near_vacuum_sweep(cfg.q, lam=cfg.lam or 1.0,
                                         n=args.sweep_n,
                                         window_cells=max(2, args.sweep_n // 25))
        if sweep["growth"] >= 10.0:
            trend = "growing"
        elif sweep["max_over_min"] < 2.0:
            trend = "flat"
        else:
            trend = "intermediate"
        report = dict(sweep, ratio_trend=trend)
    elif name == "combined":
        report = probes.lipschitz_probe_combined(
            grid, xp, n_samples=n_samples, seed=cfg.seed)
    elif name == "mve":
        report = probes.mve_probe(
            grid, alphas=_parse_float_list(args.alphas),
            betas=_parse_float_list(args.betas),
            n_samples=n_samples, seed=cfg.seed)
    elif name == "propagator":
        report = probes.propagator_norm_probe(
            grid, gamma=2.0 * nuclear.speed() + 1.0, seed=cfg.seed)
    elif name == "accel":
        report = probes.accel_bound_probe(
            grid, nuclear, xp, n_samples=n_samples, seed=cfg.seed,
            convention=cfg.convention)
    else:
        psi0 = _initial_state(cfg, grid)
        report = probes.uniqueness_scaling_probe(
            grid, psi0, nuclear, xp, make_settings(cfg), cfg.total_time,
            seed=cfg.seed, convention=cfg.convention)

    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_json(os.path.join(cfg.output_dir, f"probe_{name}.json"), report)

    failed = []
    for rep in (report.values() if isinstance(report, dict) else [report]):
        if isinstance(rep, probes.ProbeReport) and not rep.passed:
            failed.append(rep.name)
    if failed:
        print(f"probe verdict FAILED: {', '.join(sorted(set(failed)))}")
        return EXIT_MISMATCH
    print(f"probe {name}: report written to "
          f"{os.path.join(cfg.output_dir, f'probe_{name}.json')}")
    return EXIT_OK


def cmd_check_admissibility(args):
    cfg = _load_config(args)
    grid = make_grid(cfg)
    xp = make_exchange(cfg)
    nuclear = make_nuclear(cfg)
    psi0 = _initial_state(cfg, grid)

    pr = probes.propagator_norm_probe(
        grid, gamma=2.0 * nuclear.speed() + 1.0, seed=cfg.seed)
    acc = probes.accel_bound_probe(grid, nuclear, xp, seed=cfg.seed + 1,
                                   convention=cfg.convention)
    lip = probes.lipschitz_probe_combined(grid, xp, n_samples=200,
                                          seed=cfg.seed + 2)
    consts = probes.ProbedConstants(
        amplification_intercept=pr["amplification_intercept"],
        amplification_rate=pr["amplification_rate"],
        accel_c1=acc["c1"], accel_c2=acc["c2"],
        lip_c1=lip.details["difference"]["c1"],
        lip_c2=lip.details["difference"]["c2"],
        provenance={
            "amplification": f"propagator probe, seed {cfg.seed}, "
                             f"{cfg.n}^3 mesh",
            "acceleration": f"acceleration envelope, seed {cfg.seed + 1}",
            "lipschitz": f"combined mean-field envelope, seed {cfg.seed + 2}, "
                         f"200 draws",
        })
    report = probes.admissibility_check(
        grid, psi0, nuclear, xp, cfg.window_tau, consts,
        tau_max=args.tau_max)
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return EXIT_OK if report.admissible else EXIT_FEASIBILITY


def _oracle_hartree(args):
    """Softened-free comparison of the spectral Hartree solve against a
    separable reciprocal-mode sum with analytic Gaussian coefficients."""
    n, box, sigma, mmax = 64, 40.0, 1.0, 50
    grid = Grid(n, box)
    c = box / 2.0
    x = grid.axis
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    r2 = (X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2
    rho = np.exp(-r2 / (2.0 * sigma ** 2)) / (2.0 * np.pi * sigma ** 2) ** 1.5
    v = grid.poisson_hartree(rho)

    m = np.arange(-mmax, mmax + 1)
    k1 = 2.0 * np.pi * m / box
    phase = np.exp(1j * np.outer(k1, x - c))        # (modes, n)
    kx2 = k1[:, None, None] ** 2
    ky2 = k1[None, :, None] ** 2
    kz2 = k1[None, None, :] ** 2
    k2 = kx2 + ky2 + kz2
    with np.errstate(divide="ignore"):
        w = np.where(k2 > 0, np.exp(-k2 * sigma ** 2 / 2.0) / np.where(
            k2 > 0, k2, 1.0), 0.0)
    t1 = np.tensordot(w, phase, axes=(0, 0))        # ky,kz,x
    t2 = np.tensordot(t1, phase, axes=(0, 0))       # kz,x,y
    oracle = (4.0 * np.pi / box ** 3) * np.real(
        np.tensordot(t2, phase, axes=(0, 0)))       # x,y,z
    oracle -= grid.integrate(oracle) / box ** 3     # same zero-mean gauge

    r = np.sqrt(r2)
    mask = (r <= 10.0) & (r > 0.5)
    dev = float(np.max(np.abs(v[mask] - oracle[mask]) / np.abs(oracle[mask])))
    print(f"hartree-gaussian: max relative deviation {dev:.3e} "
          f"(tolerance 1e-06) over 0.5 <= |r| <= 10")
    return EXIT_OK if dev <= 1e-6 else EXIT_MISMATCH


def _oracle_free_spread(args):
    """Free Gaussian packet dispersion against the closed-form width."""
    n, box, sigma0, t_end, dt = 32, 20.0, 1.0, 0.5, 1e-3
    grid = Grid(n, box)
    c = box / 2.0
    x = grid.axis
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    r2 = (X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2
    psi = np.exp(-r2 / (4.0 * sigma0 ** 2)).astype(complex)
    psi /= l2_norm(grid, psi)
    steps = int(round(t_end / dt))
    for _ in range(steps):
        psi = grid.free_propagate(psi, dt)
    rho = psi.real ** 2 + psi.imag ** 2
    var = grid.integrate(rho * (X - c) ** 2) / grid.integrate(rho)
    width = math.sqrt(var)
    expected = sigma0 * math.sqrt(1.0 + (t_end / (2.0 * sigma0 ** 2)) ** 2)
    dev = abs(width - expected) / expected
    print(f"free-spread: width {width:.12f} vs {expected:.12f}, relative "
          f"deviation {dev:.3e} (tolerance 1e-04)")
    return EXIT_OK if dev <= 1e-4 else EXIT_MISMATCH


def _oracle_lorentz(args):
    """Weak-L3 quasinorm of the capped Coulomb kernel on the mesh."""
    n, box = 64, 10.0
    grid = Grid(n, box)
    c = box / 2.0
    x = grid.axis
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    d = np.stack([(X - c + box / 2) % box - box / 2,
                  (Y - c + box / 2) % box - box / 2,
                  (Z - c + box / 2) % box - box / 2])
    r = np.sqrt(np.sum(d ** 2, axis=0))
    cap = 1.0 / (4.0 * grid.spacing)
    with np.errstate(divide="ignore"):
        f = np.minimum(np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0),
                                np.inf), cap)
    measured = lorentz_quasinorm(grid, f, 3.0)
    expected = (4.0 * np.pi / 3.0) ** (1.0 / 3.0)
    dev = abs(measured - expected) / expected
    print(f"lorentz-coulomb: quasinorm {measured:.6f} vs continuum "
          f"{expected:.6f}, relative deviation {dev:.3%} (tolerance 5%)")
    return EXIT_OK if dev <= 0.05 else EXIT_MISMATCH


def cmd_oracle_compare(args):
    return {"hartree-gaussian": _oracle_hartree,
            "free-spread": _oracle_free_spread,
            "lorentz-coulomb": _oracle_lorentz}[args.case](args)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ksnd",
        description="Coupled quantum-classical mean-field simulator and "
                    "estimate probes")
    parser.add_argument("--config", help="path to a run configuration file")
    parser.add_argument("--output", help="override output.dir")
    parser.add_argument("--seed", type=int, help="override seed")
    parser.add_argument("--threads", type=int,
                        help="cap FFT worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the coupled solver")
    p.add_argument("--checkpoints", action="store_true",
                   help="write a binary state file at every window boundary")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe", help="run one estimate probe")
    p.add_argument("name", choices=PROBE_NAMES)
    p.add_argument("--samples", type=int, default=1000,
                   help="draws for split-sample probes")
    p.add_argument("--alphas", default="0.5,2.5",
                   help="comma-separated density exponents for the mve probe")
    p.add_argument("--betas", default="",
                   help="comma-separated gradient exponents for the mve probe")
    p.add_argument("--sweep-n", type=int, default=128,
                   help="mesh size for the exchange-threshold sweep")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("check-admissibility",
                       help="probe constants, then test the window "
                            "conditions at time.window_tau")
    p.add_argument("--tau-max", type=float, default=1.0,
                   help="bisection range for the largest admissible window")
    p.set_defaults(func=cmd_check_admissibility)

    p = sub.add_parser("oracle-compare",
                       help="compare a solver against a closed-form case")
    p.add_argument("case", choices=ORACLE_CASES)
    p.set_defaults(func=cmd_oracle_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads:
            with _fft.set_workers(args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _IOFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
