"""Fibered generator ``L_k`` in the character basis and the quantities derived from it."""

from .basis import CharacterBasis, DimensionError, Truncation, estimate_dimension
from .dense import fiber_consistency, pillet_oracle
from .dispersion import (diffusion_matrix, eigenvalue_near_zero, gap_delta_lambda, hessian_fd, spectral_gap_check,
                         spectral_report, weak_coupling_D0)
from .operators import build_L

__all__ = [
    "CharacterBasis",
    "DimensionError",
    "Truncation",
    "estimate_dimension",
    "build_L",
    "eigenvalue_near_zero",
    "diffusion_matrix",
    "hessian_fd",
    "weak_coupling_D0",
    "gap_delta_lambda",
    "spectral_gap_check",
    "spectral_report",
    "pillet_oracle",
    "fiber_consistency",
]
