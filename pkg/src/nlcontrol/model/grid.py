"""Uniform space and time grids, and the control region."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Node-membership tolerance for region endpoints that coincide with grid nodes.
_MEMBER_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``(0, length)`` with homogeneous Dirichlet ends.

    Only interior nodes ``x_i = i*h`` for ``i = 1..n_interior`` carry
    unknowns; ``h = length / (n_interior + 1)``.
    """

    n_interior: int
    length: float = 1.0

    def __post_init__(self):
        if self.n_interior < 1:
            raise ValueError(f"n_interior must be >= 1, got {self.n_interior}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def h(self) -> float:
        return self.length / (self.n_interior + 1)

    @property
    def x(self) -> np.ndarray:
        """Interior node coordinates."""
        return self.h * np.arange(1, self.n_interior + 1)

    @property
    def x_full(self) -> np.ndarray:
        """All node coordinates including both endpoints."""
        x = self.h * np.arange(self.n_interior + 2)
        x[-1] = self.length
        return x

    def l2_norm(self, u: np.ndarray) -> float:
        """Discrete L2 norm, ``sqrt(h * sum u_i^2)`` over interior nodes."""
        return float(np.sqrt(self.h * np.sum(np.asarray(u) ** 2)))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.h * np.sum(np.asarray(u) * np.asarray(v)))

    def node_index(self, x: float) -> int:
        """Index into :attr:`x` of an interior node lying exactly at ``x``."""
        k = x / self.h
        i = int(round(k))
        if abs(k - i) > 1e-9 or not 1 <= i <= self.n_interior:
            raise ValueError(f"x={x} is not an interior node of {self}")
        return i - 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T]`` into ``n_steps`` steps."""

    n_steps: int
    T: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def t(self) -> np.ndarray:
        t = self.dt * np.arange(self.n_steps + 1)
        t[-1] = self.T
        return t

    @property
    def midpoints(self) -> np.ndarray:
        return self.dt * (np.arange(self.n_steps) + 0.5)

    @property
    def interior(self) -> np.ndarray:
        """Time nodes strictly inside ``(0, T)``."""
        return self.t[1:-1]


@dataclass(frozen=True)
class ControlRegion:
    """Open interval ``omega = (omega_lo, omega_hi)`` where a control acts."""

    omega_lo: float
    omega_hi: float

    def __post_init__(self):
        if not self.omega_lo < self.omega_hi:
            raise ValueError(
                f"empty control region ({self.omega_lo}, {self.omega_hi})")

    def require_inside(self, lo: float, hi: float) -> None:
        """Raise unless the closure of omega lies strictly inside ``(lo, hi)``."""
        if not (lo < self.omega_lo and self.omega_hi < hi):
            raise ValueError(
                f"control region ({self.omega_lo}, {self.omega_hi}) must lie "
                f"strictly inside ({lo}, {hi})")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.omega_lo + self.omega_hi)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return (x > self.omega_lo + _MEMBER_TOL) & (x < self.omega_hi - _MEMBER_TOL)

    def contains_closure(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.omega_lo - _MEMBER_TOL) & (x <= self.omega_hi + _MEMBER_TOL)

    def indicator(self, grid: Grid) -> np.ndarray:
        """1.0 on interior nodes inside omega, 0.0 elsewhere."""
        return self.contains(grid.x).astype(float)
