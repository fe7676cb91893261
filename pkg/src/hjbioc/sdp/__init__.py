"""Semidefinite programs: builder, interior-point solver, SDPA interchange."""

from .problem import (ProblemError, SdpProblem, StandardForm, block_key, free_key, nonneg_key,
                      to_standard_form)
from .sdpa import export_sdpa, import_sdpa, size_estimate
from .solver import SdpSolution, SolverOptions, ValidationReport, solve, validate_solution

__all__ = [
    "ProblemError", "SdpProblem", "StandardForm", "block_key", "free_key", "nonneg_key",
    "to_standard_form", "SdpSolution", "SolverOptions", "ValidationReport", "solve",
    "validate_solution", "export_sdpa", "import_sdpa", "size_estimate",
]
