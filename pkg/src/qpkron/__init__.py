"""Preconditioned fixed-point and PCG solvers for separable elliptic problems in
low-rank Kronecker format, with two-sided a posteriori error certificates."""

from .coefficients import (SeparableCoefficient, SeparableRhs, UniformGrid, UnivariateFactor,
                           coeff_bounds, make_modulated, make_periodic_bumps, make_piecewise)
from .errors import (DivergenceError, NumericalBreakdownError, UnsupportedDimensionError,
                     ValidationError)
from .error_bounds import ErrorCertificate, majorant_1d, majorant_2d_flux, ostrowski_bounds
from .kron_fem import KroneckerMatrix, assemble_kron_stiffness, assemble_preconditioner
from .lowrank import LowRankVector, TruncationPolicy, truncate
from .operator_bounds import (SpectralReport, optimal_piecewise_constants, optimal_rho,
                              spectral_report)
from .sinc_inv import apply_inverse, build_inverse
from .solver import Problem, SolveConfig, dense_oracle_solve, iterate, pcg_solve

__all__ = [
    "DivergenceError", "ErrorCertificate", "KroneckerMatrix", "LowRankVector",
    "NumericalBreakdownError", "Problem", "SeparableCoefficient", "SeparableRhs", "SolveConfig",
    "SpectralReport", "TruncationPolicy", "UniformGrid", "UnivariateFactor",
    "UnsupportedDimensionError", "ValidationError", "apply_inverse", "assemble_kron_stiffness",
    "assemble_preconditioner", "build_inverse", "coeff_bounds", "dense_oracle_solve", "iterate",
    "majorant_1d", "majorant_2d_flux", "make_modulated", "make_periodic_bumps", "make_piecewise",
    "optimal_piecewise_constants", "optimal_rho", "ostrowski_bounds", "pcg_solve",
    "spectral_report", "truncate",
]
