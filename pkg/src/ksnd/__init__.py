"""Spectral simulator for Kohn-Sham electrons coupled to Newtonian nuclei.

The package splits into a geometry layer (grid, norms), the physical
model (potentials, forces, energies), time integrators for the coupled
system (dynamics), conservation and admissibility analysis, and a set
of calibrated estimate probes, all behind one command line entry point.
"""

from .grid import Grid
from .norms import (
    l2_norm,
    l2_norm_set,
    h1_norm,
    h2_norm,
    h2_norm_set,
    lq_norm,
    grad_norm_star,
    lorentz_quasinorm,
    lorentz_set,
    NormReport,
    norm_report,
)
from .model import (
    NuclearState,
    ExchangeParams,
    density,
    external_potential,
    hartree_potential,
    exchange_potential,
    apply_hamiltonian,
    electron_nuclear_accel,
    internuclear_accel,
    interaction_energy,
)
from .dynamics import (
    SolverSettings,
    FeasibilityRegion,
    TrajectoryRecord,
    ElectronRun,
    DuhamelReport,
    CoupledStepReport,
    SimulationResult,
    NonFiniteStateError,
    solve_electron,
    duhamel_iterate,
    solve_nuclear,
    verlet_nuclear,
    coupled_step,
    run_simulation,
)
from .analysis import (
    EnergyBreakdown,
    ConservationReport,
    total_energy,
    conservation_check,
)
from .probes import (
    ProbeReport,
    ProbedConstants,
    AdmissibilityReport,
    SampledRun,
    random_band_limited,
    lipschitz_probe_hartree,
    lipschitz_probe_exchange,
    near_vacuum_sweep,
    lipschitz_probe_combined,
    accel_bound_probe,
    mve_probe,
    propagator_norm_probe,
    admissibility_check,
    tau_star,
    sample_coupled_run,
    uniqueness_probe,
    uniqueness_scaling_probe,
)
from .config import (
    ConfigError,
    RunConfig,
    OrbitalSpec,
    NucleusSpec,
    parse_config,
    serialize_config,
    make_grid,
    make_exchange,
    make_nuclear,
    make_settings,
    initial_orbitals,
)
from .checkpoint import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointChecksumError,
    write_checkpoint,
    read_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "Grid",
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
    "NuclearState",
    "ExchangeParams",
    "density",
    "external_potential",
    "hartree_potential",
    "exchange_potential",
    "apply_hamiltonian",
    "electron_nuclear_accel",
    "internuclear_accel",
    "interaction_energy",
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
    "EnergyBreakdown",
    "ConservationReport",
    "total_energy",
    "conservation_check",
    "ProbeReport",
    "ProbedConstants",
    "AdmissibilityReport",
    "SampledRun",
    "random_band_limited",
    "lipschitz_probe_hartree",
    "lipschitz_probe_exchange",
    "near_vacuum_sweep",
    "lipschitz_probe_combined",
    "accel_bound_probe",
    "mve_probe",
    "propagator_norm_probe",
    "admissibility_check",
    "tau_star",
    "sample_coupled_run",
    "uniqueness_probe",
    "uniqueness_scaling_probe",
    "ConfigError",
    "RunConfig",
    "OrbitalSpec",
    "NucleusSpec",
    "parse_config",
    "serialize_config",
    "make_grid",
    "make_exchange",
    "make_nuclear",
    "make_settings",
    "initial_orbitals",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointChecksumError",
    "write_checkpoint",
    "read_checkpoint",
]
