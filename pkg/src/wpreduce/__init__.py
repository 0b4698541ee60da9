"""Spontaneous wave-packet reduction: master equation, random walks and jump trajectories on a 1D phase grid."""

__version__ = "0.1.0"

from ._validation import NumericalAbort, PreconditionError
from .grid import (
    LatticeSpec,
    PacketParams,
    PhaseGrid,
    PhaseSpaceLattice,
    StateVector,
    husimi_field,
    make_gaussian_packet,
    resolution_of_identity_residual,
)
from .propagators import (
    EvolutionConfig,
    Potential,
    Propagator,
    custom_potential,
    free_potential,
    harmonic_potential,
    make_disorder,
)
from .lindblad import (
    DensityMatrix,
    DiscreteKetChannels,
    LindbladSolver,
    PhaseSpaceChannels,
    husimi_of_rho,
    integrate_lindblad,
)
from .ctrw import WalkerEngine, kernel_normalization, run_walkers, source_normalization
from .trajectories import ensemble_average, run_ensemble, run_trajectory
from .coarse import CoarseSpec, coarse_kernel_Psi, macro_renewal_residual
from .localization import LocalizationOperator, limit_convergence, localization_experiment
from .estimators import CTRWHusimi, LindbladHusimi, TrajectoryHusimi

__all__ = [
    "NumericalAbort",
    "PreconditionError",
    "LatticeSpec",
    "PacketParams",
    "PhaseGrid",
    "PhaseSpaceLattice",
    "StateVector",
    "husimi_field",
    "make_gaussian_packet",
    "resolution_of_identity_residual",
    "EvolutionConfig",
    "Potential",
    "Propagator",
    "custom_potential",
    "free_potential",
    "harmonic_potential",
    "make_disorder",
    "DensityMatrix",
    "DiscreteKetChannels",
    "LindbladSolver",
    "PhaseSpaceChannels",
    "husimi_of_rho",
    "integrate_lindblad",
    "WalkerEngine",
    "kernel_normalization",
    "run_walkers",
    "source_normalization",
    "ensemble_average",
    "run_ensemble",
    "run_trajectory",
    "CoarseSpec",
    "coarse_kernel_Psi",
    "macro_renewal_residual",
    "LocalizationOperator",
    "limit_convergence",
    "localization_experiment",
    "CTRWHusimi",
    "LindbladHusimi",
    "TrajectoryHusimi",
]
