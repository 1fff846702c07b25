"""Coupled-cluster equations on small fermionic systems: zeros, indices and homotopies.

Modules
-------
fockspace
    Bitmask determinants, ladder operators, Hamiltonian assembly.
models
    Model integrals, integral files, mean-field orbitals.
cluster
    Truncation schemes, amplitude spaces, cluster operators.
cccore
    CC residual, energy, Jacobians and Newton solvers.
analysis
    Local indices, EOM spectra, degenerate zeros, degree bookkeeping.
homotopy
    Linear and rank-split homotopies, path tracing, error and existence reports.
cli
    Command-line entry point.
"""
from .cccore import (CCProblem, CCSolution, build_problem, cc_energy, cc_residual, jacobian,
                     newton_solve)
from .cluster import AmplitudeSpace, TruncationScheme
from .fockspace import Excitation, Integrals, OrbitalBasis, fci_solve
from .models import ModelSpec, build_model

__version__ = "0.1.0"

__all__ = ["CCProblem", "CCSolution", "build_problem", "cc_energy", "cc_residual", "jacobian",
           "newton_solve", "AmplitudeSpace", "TruncationScheme", "Excitation", "Integrals",
           "OrbitalBasis", "fci_solve", "ModelSpec", "build_model"]
