"""Subwavelength atomic arrays: dipole Hamiltonians, dark-state protocols and motion."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DarkArrayError,
    DomainError,
    LightConeError,
    NumericalError,
    RegimeError,
)
from .couplings import (
    CouplingMatrix,
    LatticeSpec,
    PhysicalScales,
    analytic_averaged_couplings,
    green_tensor,
    motion_averaged_couplings,
    pinned_couplings,
    sampled_couplings,
)
from .hilbert import (
    DriveSpec,
    ExcitationBasis,
    NonHermitianOperator,
    adiabatic_eliminate_motion,
    assemble_drive,
    assemble_hamiltonian,
    assemble_lamb_dicke_system,
    build_basis,
)
from .spectral import (
    BiorthogonalSpectrum,
    KrylovSpectrum,
    dense_decompose,
    evolve_state,
    krylov_decompose,
    transition_amplitude,
)
