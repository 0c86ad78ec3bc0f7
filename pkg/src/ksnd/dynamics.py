"""Time propagation for the coupled orbital/nucleus system.

The electron cloud moves by Strang splitting: a half step of the free
propagator, a full multiplicative step of the local potential evaluated
mid-step, and another half kinetic step.  The potential substep is exact
because the density is invariant under a common real phase, so each
orbital keeps its L2 norm to roundoff.  Nuclei follow the integral form
of Newton's equation,

    x(t) = x0 + v0 t + int_0^t (t - sigma) a(sigma, x(sigma)) dsigma,

solved by fixed-point iteration with trapezoid quadrature on the shared
step grid.  A velocity-Verlet integrator over the same samples serves as
an independent cross-check.  One window of length ``window_tau`` couples
the two solvers by alternation, and ``run_simulation`` chains windows,
re-deriving the feasibility bookkeeping from the state each window.

All solvers return plain records with a ``diagnostics`` dict; nothing
here raises on slow convergence -- callers read the ``converged`` flag.
Non-finite fields abort immediately with the offending step index.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    NuclearState,
    density,
    electron_nuclear_accel,
    exchange_potential,
    external_potential,
    hartree_potential,
    internuclear_accel,
)
from .norms import h2_norm_set, l2_norm

__all__ = [
    "SolverSettings",
    "FeasibilityRegion",
    "TrajectoryRecord",
    "ElectronRun",
    "DuhamelReport",
    "CoupledStepReport",
    "SimulationResult",
    "NonFiniteStateError",
    "solve_electron",
    "duhamel_iterate",
    "solve_nuclear",
    "verlet_nuclear",
    "coupled_step",
    "run_simulation",
]


class NonFiniteStateError(RuntimeError):
    """A propagated field stopped being finite; carries the step index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


@dataclass
class SolverSettings:
    """Step sizes and fixed-point controls shared by all solvers.

    dt               integration step (a.u. of time)
    window_tau       length of one coupling window; dt must divide it
    picard_tol       sup-norm tolerance of the fixed-point iterations
    max_picard_iters iteration cap before a solver reports divergence
    """

    dt: float
    window_tau: float
    picard_tol: float = 1e-10
    max_picard_iters: int = 64

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.window_tau < self.dt:
            raise ValueError(
                f"window_tau {self.window_tau} is shorter than dt {self.dt}")
        if self.picard_tol <= 0.0:
            raise ValueError("picard_tol must be positive")
        if self.max_picard_iters < 1:
            raise ValueError("max_picard_iters must be at least 1")
        steps = self.window_tau / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(
                f"window_tau/dt = {steps} is not an integer step count")

    @property
    def steps_per_window(self):
        return int(round(self.window_tau / self.dt))


@dataclass
class FeasibilityRegion:
    """Ball pair that the fixed-point argument needs the flow to stay in.

    The nuclear ball keeps every nucleus within ``delta`` of its start
    and every speed below ``gamma``; the electron ball keeps the orbital
    set within ``alpha`` of its start in H2.  ``alpha`` needs the H2
    amplification factor of the linear propagator over one window, so it
    stays None until a measured factor is supplied.
    """

    tau: float
    gamma: float
    delta: float
    alpha: float = None
    x0: np.ndarray = None

    @classmethod
    def from_state(cls, grid, psi0, nuclear, tau, amplification=None):
        gamma = 2.0 * nuclear.speed() + 1.0
        delta = 0.25 * nuclear.min_pair_distance(grid.box_length)
        alpha = None
        if amplification is not None:
            alpha = 2.0 * amplification * h2_norm_set(grid, psi0)
        return cls(tau=tau, gamma=gamma, delta=delta, alpha=alpha,
                   x0=np.array(nuclear.positions, dtype=float))

    def nuclear_inside(self, positions, velocities):
        """Both nuclear-ball predicates at one sample."""
        if self.x0 is None or self.x0.size == 0:
            return True
        disp = np.linalg.norm(positions - self.x0, axis=1)
        speed = float(np.sqrt(np.sum(velocities ** 2)))
        return bool(disp.max(initial=0.0) <= self.delta and speed <= self.gamma)

    def electron_inside(self, grid, psi, psi0):
        if self.alpha is None:
            raise ValueError("alpha is unset; supply an amplification factor")
        return bool(h2_norm_set(grid, psi - psi0) <= self.alpha)


@dataclass
class TrajectoryRecord:
    """Nuclear path sampled on the step grid.

    times must be strictly increasing; positions, velocities and
    accelerations are (n_times, M, 3).  ``position_at`` interpolates
    linearly, which is exact for the ballistic paths used as initial
    guesses and second-order accurate otherwise.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        want = (self.times.size,) + self.positions.shape[1:]
        if self.positions.shape != want or self.velocities.shape != want:
            raise ValueError("positions/velocities do not match times")

    @classmethod
    def ballistic(cls, nuclear, times):
        t = np.asarray(times, dtype=float)
        dt = t - t[0]
        pos = nuclear.positions[None] + dt[:, None, None] * nuclear.velocities[None]
        vel = np.broadcast_to(nuclear.velocities[None], pos.shape).copy()
        return cls(times=t, positions=pos, velocities=vel)

    def position_at(self, t):
        """Linear interpolation of every coordinate at scalar time t."""
        out = np.empty(self.positions.shape[1:])
        for k in range(out.shape[0]):
            for c in range(3):
                out[k, c] = np.interp(t, self.times, self.positions[:, k, c])
        return out

    def state_at(self, index, template):
        """NuclearState at sample ``index`` with template masses/charges."""
        return NuclearState(
            positions=self.positions[index].copy(),
            velocities=self.velocities[index].copy(),
            masses=template.masses,
            charges=template.charges,
        )


@dataclass
class ElectronRun:
    """Result of one Strang propagation along a fixed nuclear path."""

    times: np.ndarray            # step boundaries, length n_steps + 1
    psi: np.ndarray              # final orbitals (N, n, n, n)
    orbital_l2: np.ndarray       # per-orbital norms at every boundary
    rho: np.ndarray = None       # densities at every boundary, if kept
    snapshots: list = None       # (step, time, orbitals) triples
    diagnostics: dict = field(default_factory=dict)


@dataclass
class DuhamelReport:
    """Fixed-point history of the integral-form electron solve."""

    times: np.ndarray
    trajectory: np.ndarray       # last iterate, (n_times, N, n, n, n)
    deltas: list                 # sup-H2 distance between iterates
    ratios: list                 # successive delta ratios
    converged: bool
    iterations: int


@dataclass
class CoupledStepReport:
    """One window of electron/nucleus alternation."""

    electron: ElectronRun
    nuclear: TrajectoryRecord
    residuals: list
    alternations: int
    converged: bool


@dataclass
class SimulationResult:
    """Chained windows plus the state reached at the end."""

    psi: np.ndarray
    nuclear: NuclearState
    time: float
    windows: list                # per-window diagnostic dicts
    aborted_window: int = None   # set when a window failed to converge


def _nonlinear_potential(grid, rho, xp, include_hartree):
    v = exchange_potential(rho, xp)
    if include_hartree:
        v = v + hartree_potential(grid, rho)
    return v


def _check_finite(psi, step):
    if not np.all(np.isfinite(psi.view(float))):
        raise NonFiniteStateError(
            f"orbitals became non-finite after step {step}", step)


def _path_is_static(path):
    return path.positions.shape[1] == 0 or bool(
        np.all(path.positions == path.positions[0]))


def solve_electron(grid, psi0, path, xp, settings, *, n_steps=None, t0=0.0,
                   include_hartree=True, keep_rho=False, snapshot_steps=()):
    """Propagate orbitals along a prescribed nuclear path.

    One step is kinetic half / potential / kinetic half, with the
    external potential evaluated at the path position of the step
    midpoint and the mean-field parts evaluated from the density after
    the first half step (where it coincides with the density of the
    whole potential substep).  ``snapshot_steps`` lists step boundaries
    at which a copy of the orbitals is stored in ``snapshots``.
    """
    psi = np.array(psi0, dtype=complex)
    if n_steps is None:
        n_steps = settings.steps_per_window
    dt = settings.dt
    times = t0 + dt * np.arange(n_steps + 1)
    norms = np.empty((n_steps + 1, psi.shape[0]))
    norms[0] = [l2_norm(grid, f) for f in psi]
    rhos = None
    if keep_rho:
        rhos = np.empty((n_steps + 1,) + grid.shape)
        rhos[0] = density(psi)
    snapshot_steps = set(snapshot_steps)
    snaps = []
    if 0 in snapshot_steps:
        snaps.append((0, times[0], psi.copy()))

    # Static paths see one fixed external potential; moving paths get a
    # fresh one at each step midpoint.
    template = None
    static = _path_is_static(path)
    if static:
        nuc = _template_state(path, 0)
        v_ext = external_potential(grid, nuc, xp) if nuc is not None else 0.0

    for i in range(n_steps):
        if not static:
            mid = path.position_at(times[i] + 0.5 * dt)
            nuc = _template_state(path, 0, positions=mid)
            v_ext = external_potential(grid, nuc, xp)
        psi = grid.free_propagate(psi, 0.5 * dt)
        rho = density(psi)
        v = v_ext + _nonlinear_potential(grid, rho, xp, include_hartree)
        psi = psi * np.exp(-1j * dt * v)
        psi = grid.free_propagate(psi, 0.5 * dt)
        _check_finite(psi, i + 1)
        norms[i + 1] = [l2_norm(grid, f) for f in psi]
        if keep_rho:
            rhos[i + 1] = density(psi)
        if (i + 1) in snapshot_steps:
            snaps.append((i + 1, times[i + 1], psi.copy()))

    drift = float(np.max(np.abs(norms - norms[0])) if norms.size else 0.0)
    return ElectronRun(
        times=times, psi=psi, orbital_l2=norms, rho=rhos,
        snapshots=snaps or None,
        diagnostics={"l2_drift": drift, "n_steps": n_steps},
    )


def _template_state(path, index, positions=None):
    """NuclearState matching the path's stored template, or None if M=0."""
    tmpl = path.diagnostics.get("template")
    if tmpl is None or path.positions.shape[1] == 0:
        return None
    return NuclearState(
        positions=path.positions[index] if positions is None else positions,
        velocities=path.velocities[index],
        masses=tmpl.masses,
        charges=tmpl.charges,
    )


def duhamel_iterate(grid, psi0, path, xp, settings, *, n_steps=None, t0=0.0,
                    include_hartree=True):
    """Electron solve in integral form, iterated at the trajectory level.

    The linear part (kinetic plus external) advances by the same Strang
    step as ``solve_electron``; the mean-field source enters through the
    trapezoid rule,

        psi_{i+1} = U_step (psi_i - i dt/2 s_i) - i dt/2 s_{i+1},

    with every source s evaluated on the previous iterate.  Iterate zero
    is the plain linear propagation, so with the mean field switched off
    the first correction already lands below tolerance.
    """
    psi0 = np.array(psi0, dtype=complex)
    if n_steps is None:
        n_steps = settings.steps_per_window
    dt = settings.dt
    times = t0 + dt * np.arange(n_steps + 1)
    nn = psi0.shape

    static = _path_is_static(path)
    v_exts = None
    if static:
        nuc = _template_state(path, 0)
        v0 = external_potential(grid, nuc, xp) if nuc is not None else np.zeros(grid.shape)
        v_exts = [v0] * n_steps
    else:
        v_exts = []
        for i in range(n_steps):
            mid = path.position_at(times[i] + 0.5 * dt)
            v_exts.append(external_potential(
                grid, _template_state(path, 0, positions=mid), xp))

    def linear_step(psi, i):
        psi = grid.free_propagate(psi, 0.5 * dt)
        psi = psi * np.exp(-1j * dt * v_exts[i])
        return grid.free_propagate(psi, 0.5 * dt)

    # iterate zero: sources off
    traj = np.empty((n_steps + 1,) + nn, dtype=complex)
    traj[0] = psi0
    for i in range(n_steps):
        traj[i + 1] = linear_step(traj[i], i)
        _check_finite(traj[i + 1], i + 1)

    def sources(traj_prev):
        out = np.empty_like(traj_prev)
        for i in range(n_steps + 1):
            rho = density(traj_prev[i])
            out[i] = _nonlinear_potential(grid, rho, xp, include_hartree) * traj_prev[i]
        return out

    deltas, ratios = [], []
    converged = False
    iterations = 0
    for m in range(settings.max_picard_iters):
        iterations = m + 1
        s = sources(traj)
        new = np.empty_like(traj)
        new[0] = psi0
        for i in range(n_steps):
            stage = new[i] - 0.5j * dt * s[i]
            new[i + 1] = linear_step(stage, i) - 0.5j * dt * s[i + 1]
            _check_finite(new[i + 1], i + 1)
        delta = max(
            h2_norm_set(grid, new[i] - traj[i]) for i in range(n_steps + 1))
        deltas.append(float(delta))
        if len(deltas) > 1 and deltas[-2] > 0.0:
            ratios.append(deltas[-1] / deltas[-2])
        traj = new
        if delta < settings.picard_tol:
            converged = True
            break
        if len(ratios) >= 3 and all(r > 1.0 for r in ratios[-3:]):
            break
    return DuhamelReport(times=times, trajectory=traj, deltas=deltas,
                         ratios=ratios, converged=converged,
                         iterations=iterations)


def _accel_at(grid, rho, positions, template, xp, convention):
    """Total nuclear acceleration for given density and positions."""
    state = NuclearState(
        positions=positions,
        velocities=np.zeros_like(positions),
        masses=template.masses,
        charges=template.charges,
    )
    a = electron_nuclear_accel(grid, rho, state, xp)
    a += internuclear_accel(state, grid.box_length, convention)
    return a


def solve_nuclear(grid, times, rhos, nuclear0, xp, settings, *,
                  convention="newton_consistent", region=None):
    """Fixed-point solve of the integral form of Newton's equation.

    ``rhos`` holds the electron density at every entry of ``times``
    (shape (n_times, n, n, n), or None for a density-free run).  The
    iteration starts from the ballistic path and stops when successive
    paths agree to picard_tol in the sup norm.  When a feasibility
    region is given, each sample is tested against the nuclear ball and
    the first exit time is recorded.
    """
    times = np.asarray(times, dtype=float)
    nt = times.size
    m = nuclear0.count
    x0, v0 = nuclear0.positions, nuclear0.velocities
    pos = x0[None] + (times - times[0])[:, None, None] * v0[None]
    vel = np.broadcast_to(v0[None], pos.shape).copy()

    residuals = []
    converged = m == 0
    accels = np.zeros((nt, m, 3))
    iterations = 0
    if m > 0:
        for it in range(settings.max_picard_iters):
            iterations = it + 1
            for i in range(nt):
                rho_i = rhos[i] if rhos is not None else None
                if rho_i is None:
                    st = NuclearState(positions=pos[i], velocities=vel[i],
                                      masses=nuclear0.masses,
                                      charges=nuclear0.charges)
                    accels[i] = internuclear_accel(st, grid.box_length, convention)
                else:
                    accels[i] = _accel_at(grid, rho_i, pos[i], nuclear0, xp,
                                          convention)
            new_pos, new_vel = _integral_path(times, accels, x0, v0)
            resid = float(np.max(np.abs(new_pos - pos)) if nt else 0.0)
            residuals.append(resid)
            pos, vel = new_pos, new_vel
            if not np.all(np.isfinite(pos)):
                raise NonFiniteStateError(
                    f"nuclear path became non-finite at iteration {it}", it)
            if resid < settings.picard_tol:
                converged = True
                break
            if len(residuals) >= 4 and all(
                    residuals[k] > residuals[k - 1] for k in range(-3, 0)):
                break

    exit_time = None
    verdicts = None
    if region is not None and m > 0:
        verdicts = np.array([
            region.nuclear_inside(pos[i], vel[i]) for i in range(nt)])
        bad = np.flatnonzero(~verdicts)
        exit_time = float(times[bad[0]]) if bad.size else None

    rec = TrajectoryRecord(
        times=times, positions=pos, velocities=vel, accelerations=accels,
        diagnostics={
            "template": nuclear0,
            "picard_residuals": residuals,
            "iterations": iterations,
            "converged": converged,
            "feasibility_exit_time": exit_time,
            "in_region": verdicts,
        },
    )
    return rec


def _integral_path(times, accels, x0, v0):
    """Trapezoid evaluation of the (t - sigma) kernel and the velocity."""
    nt = times.size
    pos = np.empty((nt,) + x0.shape)
    vel = np.empty_like(pos)
    pos[0], vel[0] = x0, v0
    if nt == 1:
        return pos, vel
    dt = times[1] - times[0]
    for i in range(1, nt):
        w = np.full(i + 1, dt)
        w[0] = w[-1] = 0.5 * dt
        kern = (times[i] - times[: i + 1])
        pos[i] = x0 + v0 * (times[i] - times[0]) + np.einsum(
            "j,j,jkc->kc", w, kern, accels[: i + 1])
        vel[i] = v0 + np.einsum("j,jkc->kc", w, accels[: i + 1])
    return pos, vel


def verlet_nuclear(grid, times, rhos, nuclear0, xp, settings=None, *,
                   convention="newton_consistent"):
    """Velocity-Verlet integration over the same samples as the solver.

    On a uniform grid the converged trapezoid fixed point telescopes to
    exactly these update formulas, so the two routes agree to roundoff
    plus the Picard tolerance at any dt.  Their agreement checks the
    iteration against a closed-form evaluation of its own limit; the
    dt^2 accuracy of both is checked separately against refined steps.
    """
    times = np.asarray(times, dtype=float)
    nt = times.size
    m = nuclear0.count
    pos = np.empty((nt, m, 3))
    vel = np.empty_like(pos)
    acc = np.empty_like(pos)
    pos[0], vel[0] = nuclear0.positions, nuclear0.velocities

    def a_of(i, x):
        if rhos is None:
            st = NuclearState(positions=x, velocities=vel[0],
                              masses=nuclear0.masses, charges=nuclear0.charges)
            return internuclear_accel(st, grid.box_length, convention)
        return _accel_at(grid, rhos[i], x, nuclear0, xp, convention)

    if m == 0:
        return TrajectoryRecord(times=times, positions=pos, velocities=vel,
                                accelerations=acc,
                                diagnostics={"template": nuclear0})
    acc[0] = a_of(0, pos[0])
    for i in range(nt - 1):
        dt = times[i + 1] - times[i]
        pos[i + 1] = pos[i] + dt * vel[i] + 0.5 * dt * dt * acc[i]
        acc[i + 1] = a_of(i + 1, pos[i + 1])
        vel[i + 1] = vel[i] + 0.5 * dt * (acc[i] + acc[i + 1])
    return TrajectoryRecord(times=times, positions=pos, velocities=vel,
                            accelerations=acc,
                            diagnostics={"template": nuclear0})


def coupled_step(grid, psi0, nuclear0, xp, settings, *, t0=0.0,
                 convention="newton_consistent", region=None,
                 include_hartree=True, snapshot_steps=()):
    """One window of alternation between the two solvers.

    The nuclear path starts ballistic; each round propagates the
    orbitals along the current path, then re-solves the path in the
    resulting density.  The window converges when two successive paths
    agree to picard_tol everywhere.  With no nuclei, or with a density
    that exerts no pull, one round suffices.
    """
    n_steps = settings.steps_per_window
    times = t0 + settings.dt * np.arange(n_steps + 1)
    path = TrajectoryRecord.ballistic(nuclear0, times)
    path.diagnostics["template"] = nuclear0

    residuals = []
    converged = False
    erun = None
    nrec = path
    for alt in range(settings.max_picard_iters):
        erun = solve_electron(
            grid, psi0, path, xp, settings, n_steps=n_steps, t0=t0,
            include_hartree=include_hartree, keep_rho=True,
            snapshot_steps=snapshot_steps)
        nrec = solve_nuclear(
            grid, times, erun.rho, nuclear0, xp, settings,
            convention=convention, region=region)
        resid = float(np.max(np.abs(nrec.positions - path.positions))
                      if nuclear0.count else 0.0)
        residuals.append(resid)
        path = nrec
        if resid < settings.picard_tol:
            converged = True
            break
        if len(residuals) >= 4 and all(
                residuals[k] > residuals[k - 1] for k in range(-3, 0)):
            break
    return CoupledStepReport(
        electron=erun, nuclear=nrec, residuals=residuals,
        alternations=len(residuals), converged=converged)


def run_simulation(grid, psi0, nuclear0, xp, settings, total_time, *,
                   convention="newton_consistent", amplification=None,
                   sample_stride=0, observer=None,
                   include_hartree=True):
    """Chain coupling windows until ``total_time`` is reached.

    Every window re-derives the feasibility data (delta, gamma and,
    when an amplification factor is available, alpha) from the state it
    starts from.  ``observer(t, psi, nuclear)`` fires at t = 0 and then
    at every ``sample_stride``-th step boundary; the final boundary of
    every window is always included so chained output has no seams.  A
    window that fails to converge stops the chain and its index is
    reported in ``aborted_window``.
    """
    if total_time <= 0.0:
        raise ValueError("total_time must be positive")
    n_windows = int(math.ceil(total_time / settings.window_tau - 1e-12))
    psi = np.array(psi0, dtype=complex)
    nuclear = nuclear0.copy()
    t = 0.0
    windows = []
    aborted = None
    global_step = 0

    if observer is not None:
        observer(0.0, psi, nuclear)

    for w in range(n_windows):
        remaining = total_time - t
        tau = min(settings.window_tau, remaining)
        n_steps = int(round(tau / settings.dt))
        if n_steps == 0:
            break
        win_settings = SolverSettings(
            dt=settings.dt, window_tau=n_steps * settings.dt,
            picard_tol=settings.picard_tol,
            max_picard_iters=settings.max_picard_iters)
        region = FeasibilityRegion.from_state(
            grid, psi, nuclear, win_settings.window_tau, amplification)

        snaps = ()
        if observer is not None and sample_stride:
            snaps = sorted({
                i for i in range(1, n_steps + 1)
                if (global_step + i) % sample_stride == 0} | {n_steps})

        report = coupled_step(
            grid, psi, nuclear, xp, win_settings, t0=t,
            convention=convention, region=region,
            include_hartree=include_hartree, snapshot_steps=snaps)

        windows.append({
            "window": w,
            "t_start": t,
            "tau": win_settings.window_tau,
            "alternations": report.alternations,
            "residuals": report.residuals,
            "converged": report.converged,
            "l2_drift": report.electron.diagnostics["l2_drift"],
            "gamma": region.gamma,
            "delta": region.delta,
            "alpha": region.alpha,
            "feasibility_exit_time":
                report.nuclear.diagnostics.get("feasibility_exit_time"),
        })

        if observer is not None and report.electron.snapshots:
            for step, time_, psi_s in report.electron.snapshots:
                observer(time_, psi_s,
                         report.nuclear.state_at(step, nuclear))

        psi = report.electron.psi
        nuclear = report.nuclear.state_at(-1, nuclear)
        t += win_settings.window_tau
        global_step += n_steps

        if not report.converged:
            aborted = w
            break

    return SimulationResult(psi=psi, nuclear=nuclear, time=t,
                            windows=windows, aborted_window=aborted)
