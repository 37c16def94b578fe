"""Mean-field evolution of the Dirac sea on a cutoff momentum lattice.

The state is a projector ``P = Q + P0`` on spinor-valued functions of
momentum, evolved by ``i dP/dt = [D_Q, P]``.  See the README for the
discretization and its conventions.
"""
from ._backend import NAME as BACKEND
from .dynamics import (
    EvolutionState,
    NumericalAbort,
    ObservableRecord,
    build_initial_state,
    observe,
    run,
    step_rk4,
    step_unitary,
)
from .energy import (
    ExternalSource,
    assemble,
    bdf_energy,
    build_gaussian_source,
    coercivity_report,
    energy_gradient,
    energy_terms,
    no_source,
)
from .io import SimulationConfig, parse_config, read_snapshot, write_snapshot
from .kernels import (
    ChargeDensity,
    KernelOperator,
    LatticeMismatch,
    commutator,
    coulomb_norm,
    coulomb_pairing,
    density,
    direct_potential,
    exchange_operator,
    free_dirac,
    free_vacuum,
    hs_inner,
    hs_norm,
    p0_trace,
)
from .lattice import MomentumLattice, build_lattice, dirac_symbol, free_projector, kinetic_energy
from .scf import ScfResult, ScfSettings, charge_target_solve, scf_solve, spectral_projector

__version__ = "0.1.0"
