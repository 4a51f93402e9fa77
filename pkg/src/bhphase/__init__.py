"""Exact phase-space (Husimi / Glauber-Sudarshan) dynamics and thermodynamics of the Bose-Hubbard model."""

__version__ = "0.1.0"

from .coherent import (MeasureSample, PhasePoint, coherent_fock, husimi, overlap, sample_husimi_coherent,
                       sample_measure)
from .dynamics import (GeneratorSpec, TrajectoryEnsemble, apply_generator_P, apply_generator_Q,
                       ensemble_propagate, evolve_pde, gpe_rhs, hamiltonian_function, integrate_gpe)
from .errors import ConfigError, NumericalError, VerificationError
from .expectation import ObservableReport, expect_from_ensemble, expect_from_P_delta, expect_from_Q
from .fock import FockBasis, HamiltonianParams, build_hamiltonian, enumerate_basis, expectation_fock, propagate
from .grid import PhaseGrid2
from .thermo import BlochSpec, apply_bloch_P, apply_bloch_Q, classical_gibbs, evolve_bloch

__all__ = [
    "MeasureSample", "PhasePoint", "coherent_fock", "husimi", "overlap", "sample_husimi_coherent",
    "sample_measure", "GeneratorSpec", "TrajectoryEnsemble", "apply_generator_P", "apply_generator_Q",
    "ensemble_propagate", "evolve_pde", "gpe_rhs", "hamiltonian_function", "integrate_gpe",
    "ConfigError", "NumericalError", "VerificationError", "ObservableReport", "expect_from_ensemble",
    "expect_from_P_delta", "expect_from_Q", "FockBasis", "HamiltonianParams", "build_hamiltonian",
    "enumerate_basis", "expectation_fock", "propagate", "PhaseGrid2", "BlochSpec", "apply_bloch_P",
    "apply_bloch_Q", "classical_gibbs", "evolve_bloch",
]
