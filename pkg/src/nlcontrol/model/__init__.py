"""Grids, coefficients, kernels, couplings and the assembled operators."""
from dataclasses import dataclass

from .coupling import (
    CouplingCheck,
    CouplingSpec,
    FrozenCoefficients,
    check_c_nonvanishing,
    decompose_coupling,
    freeze_coefficients,
    linear_coupling,
    make_coupling,
    sin_coupling,
    tanh_coupling,
    zero_coupling,
)
from .grid import ControlRegion, Grid, TimeGrid
from .kernels import (
    ConstantProfile,
    DecayProfile,
    GaussianParams,
    KernelSpec,
    PiecewiseProfile,
    make_profile,
    read_kernel_csv,
    write_kernel_csv,
)
from .operators import (
    assemble_nonlocal_operator,
    assemble_spatial_operator,
    kernel_matrix,
    nonlocal_boundary_column,
    quadrature_weights,
    right_boundary_column,
)


@dataclass(frozen=True)
class SystemCoefficients:
    """Constant diffusion, drift and reaction coefficients of both equations."""

    a1: float = 1.0
    a2: float = 1.0
    b1: float = 0.0
    b2: float = 0.0
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError(f"diffusion coefficients must be positive: a1={self.a1}, a2={self.a2}")

    @property
    def a_max(self) -> float:
        return max(self.a1, self.a2)


__all__ = [
    "ConstantProfile", "ControlRegion", "CouplingCheck", "CouplingSpec", "DecayProfile",
    "FrozenCoefficients", "GaussianParams", "Grid", "KernelSpec", "PiecewiseProfile",
    "SystemCoefficients", "TimeGrid", "assemble_nonlocal_operator",
    "assemble_spatial_operator", "check_c_nonvanishing", "decompose_coupling",
    "freeze_coefficients", "kernel_matrix", "linear_coupling", "make_coupling",
    "make_profile", "nonlocal_boundary_column", "quadrature_weights", "read_kernel_csv",
    "right_boundary_column", "sin_coupling", "tanh_coupling", "write_kernel_csv",
    "zero_coupling",
]
