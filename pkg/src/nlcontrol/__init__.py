"""Null controls for semilinear coupled 1D parabolic systems with nonlocal kernel terms."""
from .model import (
    ControlRegion,
    CouplingSpec,
    FrozenCoefficients,
    Grid,
    KernelSpec,
    SystemCoefficients,
    TimeGrid,
)
from .solver import ControlSignal, LinearSystem, StateTrajectory

__version__ = "0.1.0"

__all__ = [
    "ControlRegion", "ControlSignal", "CouplingSpec", "FrozenCoefficients", "Grid",
    "KernelSpec", "LinearSystem", "StateTrajectory", "SystemCoefficients", "TimeGrid",
]
