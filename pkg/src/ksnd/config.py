"""Run configuration: a small line-oriented text format.

Grammar, in full:

  * ``#`` starts a comment (whole line or trailing); blank lines are
    ignored.
  * ``section.key = value`` assigns a scalar setting.  Values are
    integers, reals, booleans (``true``/``false``), bare strings, or
    three whitespace-separated reals for vectors.
  * ``[orbital]`` and ``[nucleus]`` open a block; the indented-or-not
    ``key = value`` lines that follow belong to it until the next block
    header or dotted key.  Blocks repeat, one per orbital or nucleus,
    in order.

Parsing validates everything it can and reports every violation at
once, each with its line number: unknown keys, missing required keys,
type errors, and range violations are all collected before the parser
gives up.  ``serialize_config`` writes the canonical form, and
``parse_config(serialize_config(cfg))`` reproduces ``cfg`` exactly.

The builder helpers at the bottom turn a validated config into the live
objects the solvers consume.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SolverSettings
from .grid import Grid
from .model import CONVENTIONS, ExchangeParams, NuclearState

__all__ = [
    "ConfigError",
    "OrbitalSpec",
    "NucleusSpec",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "make_grid",
    "make_exchange",
    "make_nuclear",
    "make_settings",
    "initial_orbitals",
]

INITIAL_MODES = ("gaussian_packets", "file")


class ConfigError(ValueError):
    """All problems found in one parse, each as (line, message)."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(
            f"line {line}: {msg}" for line, msg in self.problems))


@dataclass
class OrbitalSpec:
    center: tuple
    width: float
    momentum: tuple = (0.0, 0.0, 0.0)


@dataclass
class NucleusSpec:
    mass: float
    charge: float
    position: tuple
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass
class RunConfig:
    n: int
    box_length: float
    n_orbitals: int
    lam: float
    q: float
    dt: float
    window_tau: float
    total_time: float
    initial: str = "gaussian_packets"
    orbital_file: str = ""
    orthonormalize: bool = False
    orbitals: list = field(default_factory=list)
    nuclei: list = field(default_factory=list)
    epsilon: float = 0.0
    picard_tol: float = 1e-10
    picard_max_iters: int = 64
    convention: str = "newton_consistent"
    seed: int = 0
    output_dir: str = "out"
    output_stride: int = 0


# key -> (parser, required, default); vectors parse to 3-tuples
_TOP_KEYS = {
    "grid.n": ("int", True, None),
    "grid.box_length": ("float", True, None),
    "electrons.count": ("int", True, None),
    "electrons.initial": ("str", False, "gaussian_packets"),
    "electrons.file": ("str", False, ""),
    "electrons.orthonormalize": ("bool", False, False),
    "exchange.lambda": ("float", True, None),
    "exchange.q": ("float", True, None),
    "softening.epsilon": ("float", False, 0.0),
    "time.dt": ("float", True, None),
    "time.window_tau": ("float", True, None),
    "time.total": ("float", True, None),
    "picard.tol": ("float", False, 1e-10),
    "picard.max_iters": ("int", False, 64),
    "forces.convention": ("str", False, "newton_consistent"),
    "seed": ("int", False, 0),
    "output.dir": ("str", False, "out"),
    "output.stride": ("int", False, 0),
}

_ORBITAL_KEYS = {
    "center": ("vec", True, None),
    "width": ("float", True, None),
    "momentum": ("vec", False, (0.0, 0.0, 0.0)),
}

_NUCLEUS_KEYS = {
    "mass": ("float", True, None),
    "charge": ("float", True, None),
    "position": ("vec", True, None),
    "velocity": ("vec", False, (0.0, 0.0, 0.0)),
}


def _convert(kind, raw):
    if kind == "int":
        v = int(raw)
        if str(v) != raw.strip():
            raise ValueError
        return v
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false"):
            raise ValueError
        return low == "true"
    if kind == "vec":
        parts = raw.split()
        if len(parts) != 3:
            raise ValueError
        return tuple(float(p) for p in parts)
    return raw.strip()


def _parse_lines(text, problems):
    """Tokenize into top-level assignments and block assignments."""
    top = {}        # key -> (line, value string)
    blocks = []     # (line, name, {key: (line, value string)})
    current = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                problems.append((lineno, f"malformed block header {line!r}"))
                current = None
                continue
            name = line[1:-1].strip()
            if name not in ("orbital", "nucleus"):
                problems.append((lineno, f"unknown block [{name}]"))
                current = None
                continue
            current = {}
            blocks.append((lineno, name, current))
            continue
        if "=" not in line:
            problems.append((lineno, f"expected 'key = value', got {line!r}"))
            continue
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if "." in key or key == "seed":
            current = None       # dotted keys return to the top level
            if key not in _TOP_KEYS:
                problems.append((lineno, f"unknown key {key!r}"))
                continue
            if key in top:
                problems.append((lineno, f"duplicate key {key!r}"))
                continue
            top[key] = (lineno, raw)
        elif current is not None:
            if key in current:
                problems.append((lineno, f"duplicate key {key!r} in block"))
                continue
            current[key] = (lineno, raw)
        else:
            problems.append(
                (lineno, f"key {key!r} outside any [orbital]/[nucleus] block"))
    return top, blocks


def _take(table, key_table, key, problems, out):
    kind, required, default = key_table[key]
    if key not in table:
        if required:
            problems.append((0, f"missing required key {key!r}"))
            return None
        return default
    lineno, raw = table[key]
    try:
        value = _convert(kind, raw)
    except ValueError:
        problems.append((lineno, f"{key}: cannot parse {raw!r} as {kind}"))
        return None
    out[key] = lineno
    return value


def _check(problems, lines, key, ok, constraint):
    if not ok:
        problems.append((lines.get(key, 0), f"{key}: {constraint}"))


def parse_config(text):
    """Parse and validate; raises ConfigError listing every problem."""
    problems = []
    top, blocks = _parse_lines(text, problems)
    lines = {}

    def take(key):
        return _take(top, _TOP_KEYS, key, problems, lines)

    n = take("grid.n")
    box = take("grid.box_length")
    count = take("electrons.count")
    initial = take("electrons.initial")
    orb_file = take("electrons.file")
    orthon = take("electrons.orthonormalize")
    lam = take("exchange.lambda")
    q = take("exchange.q")
    eps = take("softening.epsilon")
    dt = take("time.dt")
    tau = take("time.window_tau")
    total = take("time.total")
    tol = take("picard.tol")
    iters = take("picard.max_iters")
    conv = take("forces.convention")
    seed = take("seed")
    outdir = take("output.dir")
    stride = take("output.stride")

    orbitals, nuclei = [], []
    for blockline, name, body in blocks:
        key_table = _ORBITAL_KEYS if name == "orbital" else _NUCLEUS_KEYS
        vals = {}
        for key, (lineno, raw) in body.items():
            if key not in key_table:
                problems.append((lineno, f"unknown key {key!r} in [{name}]"))
                continue
            try:
                vals[key] = _convert(key_table[key][0], raw)
            except ValueError:
                problems.append(
                    (lineno,
                     f"[{name}] {key}: cannot parse {raw!r} as "
                     f"{key_table[key][0]}"))
        for key, (kind, required, default) in key_table.items():
            if key not in vals:
                if required:
                    problems.append(
                        (blockline, f"[{name}] missing required key {key!r}"))
                else:
                    vals[key] = default
        if any(k not in vals for k in key_table):
            continue
        if name == "orbital":
            if vals["width"] <= 0:
                problems.append((blockline, "[orbital] width must be > 0"))
            orbitals.append(OrbitalSpec(**vals))
        else:
            if vals["mass"] <= 0:
                problems.append((blockline, "[nucleus] mass must be > 0"))
            if vals["charge"] <= 0:
                problems.append((blockline, "[nucleus] charge must be > 0"))
            nuclei.append(NucleusSpec(**vals))

    def check(key, ok, constraint):
        _check(problems, lines, key, ok, constraint)

    if n is not None:
        check("grid.n", n >= 8 and (n & (n - 1)) == 0,
              "must be a power of two, at least 8")
    if box is not None:
        check("grid.box_length", box > 0, "must be > 0")
    if count is not None:
        check("electrons.count", count >= 1, "must be >= 1")
    if initial is not None:
        check("electrons.initial", initial in INITIAL_MODES,
              f"must be one of {INITIAL_MODES}")
    if q is not None:
        check("exchange.q", q > 1, "the exchange exponent must satisfy q > 1")
    if eps is not None:
        check("softening.epsilon", eps >= 0, "must be >= 0")
    if dt is not None:
        check("time.dt", dt > 0 and math.isfinite(dt), "must be > 0")
    if tau is not None and dt is not None and dt > 0:
        check("time.window_tau", tau >= dt, "must be >= time.dt")
        ratio = tau / dt
        check("time.window_tau", abs(ratio - round(ratio)) < 1e-9 * max(ratio, 1.0),
              "must be an integer multiple of time.dt")
    if total is not None:
        check("time.total", total > 0, "must be > 0")
    if tol is not None:
        check("picard.tol", tol > 0, "must be > 0")
    if iters is not None:
        check("picard.max_iters", iters >= 1, "must be >= 1")
    if conv is not None:
        check("forces.convention", conv in CONVENTIONS,
              f"must be one of {CONVENTIONS}")
    if stride is not None:
        check("output.stride", stride >= 0, "must be >= 0")
    if initial == "gaussian_packets" and count is not None:
        if len(orbitals) != count:
            problems.append(
                (lines.get("electrons.count", 0),
                 f"electrons.count = {count} but {len(orbitals)} [orbital] "
                 f"blocks given"))
    if initial == "file" and not orb_file:
        problems.append(
            (lines.get("electrons.initial", 0),
             "electrons.initial = file requires electrons.file"))

    if problems:
        raise ConfigError(sorted(problems))

    return RunConfig(
        n=n, box_length=box, n_orbitals=count, lam=lam, q=q, dt=dt,
        window_tau=tau, total_time=total, initial=initial,
        orbital_file=orb_file, orthonormalize=orthon, orbitals=orbitals,
        nuclei=nuclei, epsilon=eps, picard_tol=tol, picard_max_iters=iters,
        convention=conv, seed=seed, output_dir=outdir, output_stride=stride)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg):
    """Canonical text form; a fixed point of parse -> serialize."""
    out = [
        f"grid.n = {cfg.n}",
        f"grid.box_length = {_fmt(cfg.box_length)}",
        f"electrons.count = {cfg.n_orbitals}",
        f"electrons.initial = {cfg.initial}",
    ]
    if cfg.orbital_file:
        out.append(f"electrons.file = {cfg.orbital_file}")
    out += [
        f"electrons.orthonormalize = {_fmt(cfg.orthonormalize)}",
        f"exchange.lambda = {_fmt(cfg.lam)}",
        f"exchange.q = {_fmt(cfg.q)}",
        f"softening.epsilon = {_fmt(cfg.epsilon)}",
        f"time.dt = {_fmt(cfg.dt)}",
        f"time.window_tau = {_fmt(cfg.window_tau)}",
        f"time.total = {_fmt(cfg.total_time)}",
        f"picard.tol = {_fmt(cfg.picard_tol)}",
        f"picard.max_iters = {cfg.picard_max_iters}",
        f"forces.convention = {cfg.convention}",
        f"seed = {cfg.seed}",
        f"output.dir = {cfg.output_dir}",
        f"output.stride = {cfg.output_stride}",
    ]
    for orb in cfg.orbitals:
        out += ["", "[orbital]",
                f"center = {_fmt(orb.center)}",
                f"width = {_fmt(orb.width)}",
                f"momentum = {_fmt(orb.momentum)}"]
    for nuc in cfg.nuclei:
        out += ["", "[nucleus]",
                f"mass = {_fmt(nuc.mass)}",
                f"charge = {_fmt(nuc.charge)}",
                f"position = {_fmt(nuc.position)}",
                f"velocity = {_fmt(nuc.velocity)}"]
    return "\n".join(out) + "\n"


def make_grid(cfg):
    return Grid(cfg.n, cfg.box_length)


def make_exchange(cfg):
    return ExchangeParams(lam=cfg.lam, q=cfg.q, epsilon=cfg.epsilon)


def make_nuclear(cfg):
    m = len(cfg.nuclei)
    return NuclearState(
        positions=np.array([nu.position for nu in cfg.nuclei],
                           dtype=float).reshape(m, 3),
        velocities=np.array([nu.velocity for nu in cfg.nuclei],
                            dtype=float).reshape(m, 3),
        masses=np.array([nu.mass for nu in cfg.nuclei], dtype=float),
        charges=np.array([nu.charge for nu in cfg.nuclei], dtype=float))


def make_settings(cfg):
    return SolverSettings(dt=cfg.dt, window_tau=cfg.window_tau,
                          picard_tol=cfg.picard_tol,
                          max_picard_iters=cfg.picard_max_iters)


def initial_orbitals(cfg, grid):
    """Gaussian packets from the [orbital] blocks, unit L2 each.

    With ``orthonormalize`` the packets pass through one Gram-Schmidt
    sweep in the grid inner product before the final normalisation, so
    overlapping packets come out orthonormal.
    """
    from .norms import l2_norm

    x = grid.axis
    psi = np.empty((len(cfg.orbitals), grid.n, grid.n, grid.n), dtype=complex)
    mesh = np.meshgrid(x, x, x, indexing="ij")
    for j, orb in enumerate(cfg.orbitals):
        r2 = sum((mesh[d] - orb.center[d]) ** 2 for d in range(3))
        phase = sum(orb.momentum[d] * mesh[d] for d in range(3))
        f = np.exp(-r2 / (2.0 * orb.width ** 2) + 1j * phase)
        psi[j] = f / l2_norm(grid, f)
    if cfg.orthonormalize:
        for j in range(psi.shape[0]):
            for i in range(j):
                psi[j] -= grid.integrate(np.conj(psi[i]) * psi[j]) * psi[i]
            psi[j] /= l2_norm(grid, psi[j])
    return psi
