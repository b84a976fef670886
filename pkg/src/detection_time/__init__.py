"""Detection-time statistics for a guided particle hitting a detector plane.

Crank-Nicolson evolution of a scalar or spin-1/2 wave function under
absorbing boundary conditions or complex absorbing potentials, the resulting
detection-time densities, and Bohmian arrival-time ensembles.
"""

from .errors import (
    ConfigError,
    DetectionTimeError,
    DomainError,
    ModeError,
    OracleInvalid,
    SolverFailure,
    StencilError,
)
from .grid import GridSpec, SpinorField
from .model import BlochSpinor, DetectorModel, PhysicsConfig, initial_state, to_si
from .operators import assemble_hamiltonian
from .propagator import CrankNicolson, SolverConfig, cn_step, propagate

__version__ = "0.1.0"

__all__ = [
    "BlochSpinor",
    "ConfigError",
    "CrankNicolson",
    "DetectionTimeError",
    "DetectorModel",
    "DomainError",
    "GridSpec",
    "ModeError",
    "OracleInvalid",
    "PhysicsConfig",
    "SolverConfig",
    "SolverFailure",
    "SpinorField",
    "StencilError",
    "assemble_hamiltonian",
    "cn_step",
    "initial_state",
    "propagate",
    "to_si",
]
