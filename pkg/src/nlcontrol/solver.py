"""Crank-Nicolson time stepping of the coupled nonlocal system and its adjoint.

The discrete forward map for one step ``n`` (generator ``A_n`` sampled at the
step midpoint) is::

    (I - dt/2 A_n) U^{n+1} = (I + dt/2 A_n) U^n + dt B f_n

with ``f_n`` the control held constant on ``(t_n, t_{n+1})``.  The adjoint is
the exact transpose of this recursion, run backward::

    (I - dt/2 A_n)^T Q^n = P^{n+1},   P^n = (I + dt/2 A_n)^T Q^n

so ``Q^n = (P^n + P^{n+1}) / 2`` and the duality identity::

    <U^N, P^N> - <U^0, P^0> = sum_n dt <f_n, B^T Q^n>

holds to rounding error.  The transpose of ``A_n`` swaps the drift sign,
reverses the kernel argument and transposes the 2x2 coupling block.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .model import (
    CouplingSpec,
    FrozenCoefficients,
    Grid,
    KernelSpec,
    SystemCoefficients,
    TimeGrid,
    assemble_spatial_operator,
    kernel_matrix,
    nonlocal_boundary_column,
    quadrature_weights,
    right_boundary_column,
)


class SolverError(RuntimeError):
    """A time step could not be completed; ``step`` is the offending index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (time step {step})")
        self.step = step


@dataclass(frozen=True)
class ControlSignal:
    """Controls on ``omega x (0, T)``, piecewise constant in time.

    ``y`` (and ``z`` in two-control mode) have shape ``(n_steps, n_interior)``;
    row ``n`` acts on ``(t_n, t_{n+1})``.  Values outside omega are zeroed on
    construction.
    """

    y: np.ndarray
    mask: np.ndarray
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=float)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float) * mask)
        if self.z is not None:
            object.__setattr__(self, "z", np.asarray(self.z, dtype=float) * mask)

    @classmethod
    def zeros(cls, mask, n_steps: int, two_controls: bool = False) -> "ControlSignal":
        shape = (n_steps, len(mask))
        return cls(np.zeros(shape), mask, np.zeros(shape) if two_controls else None)

    @classmethod
    def from_array(cls, arr: np.ndarray, mask) -> "ControlSignal":
        return cls(arr[0], mask, arr[1] if arr.shape[0] > 1 else None)

    @property
    def two_controls(self) -> bool:
        return self.z is not None

    def as_array(self) -> np.ndarray:
        parts = [self.y] if self.z is None else [self.y, self.z]
        return np.stack(parts)

    def norm(self, grid: Grid, time_grid: TimeGrid) -> float:
        """``L2(omega x (0,T))`` norm with the ``dt * h`` product quadrature."""
        return float(np.sqrt(time_grid.dt * grid.h * np.sum(self.as_array() ** 2)))

    def __mul__(self, factor: float) -> "ControlSignal":
        return ControlSignal(self.y * factor, self.mask,
                             None if self.z is None else self.z * factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class StateTrajectory:
    """States ``y, z`` at time nodes, shape ``(n_steps + 1, n_interior)``."""

    y: np.ndarray
    z: np.ndarray
    grid: Grid
    time_grid: TimeGrid

    @property
    def y0(self) -> np.ndarray:
        return self.y[0]

    @property
    def z0(self) -> np.ndarray:
        return self.z[0]

    def terminal_norms(self) -> tuple[float, float]:
        return self.grid.l2_norm(self.y[-1]), self.grid.l2_norm(self.z[-1])

    def terminal_norm(self) -> float:
        ny, nz = self.terminal_norms()
        return float(np.hypot(ny, nz))

    def norms(self) -> np.ndarray:
        """``||(y, z)(t_n)||`` at every time node."""
        h = self.grid.h
        return np.sqrt(h * (np.sum(self.y ** 2, axis=1) + np.sum(self.z ** 2, axis=1)))

    def midpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Step-midpoint averages, shape ``(n_steps, n_interior)``."""
        return 0.5 * (self.y[1:] + self.y[:-1]), 0.5 * (self.z[1:] + self.z[:-1])

    def l2q_distance(self, other: "StateTrajectory") -> float:
        return l2q_norm(self.y - other.y, self.z - other.z, self.grid, self.time_grid)

    def l2q_norm(self) -> float:
        return l2q_norm(self.y, self.z, self.grid, self.time_grid)


def l2q_norm(y: np.ndarray, z: np.ndarray, grid: Grid, time_grid: TimeGrid) -> float:
    """``L2(Q)^2`` norm of a node-sampled pair, trapezoid in time."""
    w = np.full(time_grid.n_steps + 1, time_grid.dt)
    w[[0, -1]] *= 0.5
    total = np.sum(w[:, None] * (y ** 2 + z ** 2)) * grid.h
    return float(np.sqrt(total))


@dataclass(frozen=True)
class AdjointTrajectory:
    """Adjoint states ``phi, psi`` at time nodes plus their per-step observations.

    ``obs_phi[n]`` equals ``(phi[n] + phi[n+1]) / 2`` up to rounding; it is
    the quantity paired with the control of step ``n``.
    """

    phi: np.ndarray
    psi: np.ndarray
    obs_phi: np.ndarray
    obs_psi: np.ndarray
    grid: Grid
    time_grid: TimeGrid

    @property
    def phi_T(self) -> np.ndarray:
        return self.phi[-1]

    @property
    def psi_T(self) -> np.ndarray:
        return self.psi[-1]


@dataclass(frozen=True)
class RightBoundaryData:
    """Dirichlet values ``y(length, t), z(length, t)`` at the time nodes."""

    h1: np.ndarray
    h2: np.ndarray


class LinearSystem:
    """Discretised frozen-coefficient system with cached step factorisations.

    An instance must not be used from several threads at once: the cached
    LU factors are not safe to share.  ``with_frozen(system.frozen)`` gives an
    independent copy.

    Parameters
    ----------
    coeffs : SystemCoefficients
    kernels : pair of KernelSpec
        Kernel of the ``y`` and of the ``z`` equation.
    grid, time_grid : Grid, TimeGrid
    frozen : FrozenCoefficients, optional
        Fields of shape ``(n_steps, n_interior)`` sampled at step midpoints.
        ``None`` means no coupling.
    support : float
        Upper limit of the nonlocal integral (1.0 unless the domain is extended).
    """

    def __init__(self, coeffs: SystemCoefficients, kernels: Sequence[KernelSpec], grid: Grid,
                 time_grid: TimeGrid, frozen: Optional[FrozenCoefficients] = None,
                 support: float = 1.0):
        self.coeffs = coeffs
        self.kernels = tuple(kernels)
        self.grid = grid
        self.time_grid = time_grid
        self.support = support
        n = grid.n_interior
        shape = (time_grid.n_steps, n)
        if frozen is None:
            frozen = FrozenCoefficients.zeros(shape)
        if frozen.shape != shape:
            raise ValueError(f"frozen coefficients have shape {frozen.shape}, expected {shape}")
        self.frozen = frozen
        self._local = (assemble_spatial_operator(coeffs.a1, coeffs.b1, coeffs.c1, grid),
                       assemble_spatial_operator(coeffs.a2, coeffs.b2, coeffs.c2, grid))
        w = quadrature_weights(grid, support)
        self._kw = tuple(None if k.is_zero else kernel_matrix(k, grid) * w[None, :]
                         for k in self.kernels)
        self.time_invariant = frozen.time_invariant and all(
            k.is_zero or k.profile.time_invariant for k in self.kernels)
        self._steps: dict[int, tuple] = {}

    @property
    def n(self) -> int:
        return self.grid.n_interior

    def with_frozen(self, frozen: FrozenCoefficients) -> "LinearSystem":
        return LinearSystem(self.coeffs, self.kernels, self.grid, self.time_grid, frozen,
                            self.support)

    def kernel_block(self, which: int, t: float) -> np.ndarray:
        kw = self._kw[which]
        if kw is None:
            return np.zeros((self.n, self.n))
        return float(self.kernels[which].lam(t)) * kw

    def generator(self, step: int) -> np.ndarray:
        """Full ``2n x 2n`` generator ``A_n`` used on step ``step``."""
        n = self.n
        t = self.time_grid.midpoints[step]
        f = self.frozen
        A = np.zeros((2 * n, 2 * n))
        A[:n, :n] = self._local[0] + self.kernel_block(0, t) + np.diag(f.a[step])
        A[:n, n:] = np.diag(f.b[step])
        A[n:, :n] = np.diag(f.c[step])
        A[n:, n:] = self._local[1] + self.kernel_block(1, t) + np.diag(f.d[step])
        return A

    def step_matrices(self, step: int):
        """``(lu(I - dt/2 A), I + dt/2 A)`` for a step, cached."""
        key = 0 if self.time_invariant else step
        cached = self._steps.get(key)
        if cached is None:
            A = self.generator(step)
            half = 0.5 * self.time_grid.dt * A
            eye = np.eye(2 * self.n)
            lhs = eye - half
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)  # reported below as SolverError
                lu, piv = lu_factor(lhs, check_finite=True)
            pivots = np.abs(np.diag(lu))
            if not np.all(np.isfinite(lu)) or pivots.min() <= 1e-14 * max(pivots.max(), 1.0):
                raise SolverError("singular Crank-Nicolson step matrix", step)
            cached = ((lu, piv), eye + half)
            self._steps[key] = cached
        return cached

    def _boundary_lift(self, step: int, boundary: Optional[RightBoundaryData]) -> np.ndarray:
        """``dt/2 * E_n (g^n + g^{n+1})`` for inhomogeneous Dirichlet data at ``x = length``."""
        if boundary is None:
            return 0.0
        c, g = self.coeffs, self.grid
        t = self.time_grid.midpoints[step]
        out = np.zeros(2 * self.n)
        for which, (a, b, data) in enumerate(((c.a1, c.b1, boundary.h1), (c.a2, c.b2, boundary.h2))):
            col = right_boundary_column(a, b, g)
            if not self.kernels[which].is_zero:
                col = col + nonlocal_boundary_column(self.kernels[which], g, t)
            out[which * self.n:(which + 1) * self.n] = col * (data[step] + data[step + 1])
        return 0.5 * self.time_grid.dt * out

    def _forcing(self, control: Optional[ControlSignal], step: int) -> np.ndarray:
        if control is None:
            return 0.0
        dt = self.time_grid.dt
        f = np.zeros(2 * self.n)
        f[:self.n] = control.y[step]
        if control.z is not None:
            f[self.n:] = control.z[step]
        return dt * f

    def _check_control(self, control):
        if control is not None and control.y.shape != (self.time_grid.n_steps, self.n):
            raise ValueError(f"control shape {control.y.shape} does not match the grids")

    def forward(self, control: Optional[ControlSignal], y0, z0,
                boundary: Optional[RightBoundaryData] = None) -> StateTrajectory:
        """Solve the linear system from ``(y0, z0)`` under ``control``."""
        self._check_control(control)
        n, N = self.n, self.time_grid.n_steps
        U = np.empty((N + 1, 2 * n))
        U[0, :n] = y0
        U[0, n:] = z0
        for k in range(N):
            lu, mplus = self.step_matrices(k)
            rhs = mplus @ U[k] + self._forcing(control, k) + self._boundary_lift(k, boundary)
            U[k + 1] = lu_solve(lu, rhs)
        return StateTrajectory(U[:, :n], U[:, n:], self.grid, self.time_grid)

    def adjoint(self, phi_T, psi_T) -> AdjointTrajectory:
        """Run the transposed recursion backward from ``(phi_T, psi_T)``."""
        n, N = self.n, self.time_grid.n_steps
        P = np.empty((N + 1, 2 * n))
        Q = np.empty((N, 2 * n))
        P[N, :n] = phi_T
        P[N, n:] = psi_T
        for k in range(N - 1, -1, -1):
            lu, mplus = self.step_matrices(k)
            Q[k] = lu_solve(lu, P[k + 1], trans=1)
            P[k] = mplus.T @ Q[k]
        return AdjointTrajectory(P[:, :n], P[:, n:], Q[:, :n], Q[:, n:], self.grid,
                                 self.time_grid)

    def forward_semilinear(self, coupling: CouplingSpec, control: Optional[ControlSignal], y0, z0,
                           boundary: Optional[RightBoundaryData] = None, max_inner: int = 50,
                           tol: float = 1e-12) -> StateTrajectory:
        """Solve with the nonlinearity ``(F, G)`` at the step-midpoint state.

        Each step is the fixed point of::

            (I - dt/2 A) V = (I + dt/2 A) U^n + dt N((U^n + V)/2) + forcing

        iterated until the increment is below ``tol`` (relative to ``max(1, |V|)``).
        Any frozen coefficients of this system are kept as an extra linear part.
        """
        self._check_control(control)
        n, N = self.n, self.time_grid.n_steps
        dt = self.time_grid.dt
        U = np.empty((N + 1, 2 * n))
        U[0, :n] = y0
        U[0, n:] = z0
        nonlin = np.empty(2 * n)
        for k in range(N):
            lu, mplus = self.step_matrices(k)
            base = mplus @ U[k] + self._forcing(control, k) + self._boundary_lift(k, boundary)
            V = lu_solve(lu, base)
            for _ in range(max_inner):
                mid = 0.5 * (U[k] + V)
                nonlin[:n], nonlin[n:] = coupling(mid[:n], mid[n:])
                V_new = lu_solve(lu, base + dt * nonlin)
                incr = np.max(np.abs(V_new - V))
                V = V_new
                if incr <= tol * max(1.0, np.max(np.abs(V))):
                    break
            else:
                raise SolverError(
                    f"inner fixed-point iteration did not converge in {max_inner} iterations", k)
            U[k + 1] = V
        return StateTrajectory(U[:, :n], U[:, n:], self.grid, self.time_grid)

    def growth_rate_bound(self, bound_m: float = 0.0) -> float:
        """Upper bound ``C`` on the symmetric part of every generator.

        Uses ``max(c_i)`` for the local part (the discrete Laplacian is
        negative and central drift is skew), ``sup|lambda| * ||J||_{L2}`` for
        each kernel block and ``2 M`` for the coupling block.
        """
        c = self.coeffs
        t = self.time_grid.midpoints
        kernel_part = 0.0
        for k in self.kernels:
            if not k.is_zero:
                sup_lam = float(np.max(np.abs(k.lam(t))))
                lo = -self.grid.length
                kernel_part = max(kernel_part, sup_lam * np.sqrt(k.l2_norm_sq(lo, self.grid.length)))
        return max(c.c1, c.c2) + kernel_part + 2.0 * bound_m

    def measured_growth_rate(self) -> float:
        """Largest eigenvalue of the symmetric part over all steps."""
        steps = [0] if self.time_invariant else range(self.time_grid.n_steps)
        worst = -np.inf
        for k in steps:
            A = self.generator(k)
            worst = max(worst, float(np.linalg.eigvalsh(0.5 * (A + A.T)).max()))
        return worst


def cn_amplification(rate: float, dt: float) -> float:
    """Per-step Crank-Nicolson norm bound ``(1 + rate dt/2) / (1 - rate dt/2)``."""
    x = 0.5 * rate * dt
    if x >= 1:
        return np.inf
    return (1 + x) / (1 - x)


def solve_forward(system: LinearSystem, control, y0, z0, boundary=None) -> StateTrajectory:
    return system.forward(control, y0, z0, boundary)


def solve_adjoint(system: LinearSystem, phi_T, psi_T) -> AdjointTrajectory:
    return system.adjoint(phi_T, psi_T)


def solve_semilinear_forward(system: LinearSystem, coupling: CouplingSpec, control, y0, z0,
                             boundary=None, max_inner: int = 50,
                             tol: float = 1e-12) -> StateTrajectory:
    return system.forward_semilinear(coupling, control, y0, z0, boundary, max_inner, tol)


def duality_gap(system: LinearSystem, control: ControlSignal, y0, z0, phi_T, psi_T):
    """Both sides of the discrete duality identity.

    Returns ``(lhs, rhs)`` with ``lhs = <y(T),phi_T> + <z(T),psi_T> - <y0,phi(0)> - <z0,psi(0)>``
    and ``rhs = sum_n dt <f_n, obs_n>_omega``.
    """
    g, tg = system.grid, system.time_grid
    traj = system.forward(control, y0, z0)
    adj = system.adjoint(phi_T, psi_T)
    lhs = (g.inner(traj.y[-1], phi_T) + g.inner(traj.z[-1], psi_T)
           - g.inner(y0, adj.phi[0]) - g.inner(z0, adj.psi[0]))
    rhs = tg.dt * g.h * np.sum(control.y * adj.obs_phi)
    if control.z is not None:
        rhs += tg.dt * g.h * np.sum(control.z * adj.obs_psi)
    return lhs, float(rhs)


def wprime_norm(u: np.ndarray, grid: Grid, time_grid: TimeGrid) -> float:
    """Discrete ``L2(0,T;H1_0) + H1(0,T;H^-1)`` norm of a node-sampled field.

    The ``H^-1`` part uses the inverse of the discrete Dirichlet Laplacian.
    Diagnostic only: the dual-norm discretisation is approximate.
    """
    h, dt = grid.h, time_grid.dt
    padded = np.pad(u, ((0, 0), (1, 1)))
    grad = np.diff(padded, axis=1) / h
    w = np.full(time_grid.n_steps + 1, dt)
    w[[0, -1]] *= 0.5
    h1_part = np.sum(w[:, None] * grad ** 2) * h
    ut = np.diff(u, axis=0) / dt
    neg_lap = -assemble_spatial_operator(1.0, 0.0, 0.0, grid)
    sol = np.linalg.solve(neg_lap, ut.T)
    hm1_part = dt * h * np.sum(ut.T * sol)
    return float(np.sqrt(h1_part + hm1_part))
