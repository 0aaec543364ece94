"""Dirichlet controls at ``x = 1`` obtained from an interior control on ``(0, 1 + e)``.

The state equations are posed on the extended interval with the control
acting in a region beyond ``x = 1``; the traces of the controlled state at
``x = 1`` are then used as Dirichlet data for the original interval.  The
nonlocal integral keeps its support ``(0, 1)`` on the extended interval.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .fixedpoint import FixedPointConfig, SemilinearProblem, solve_semilinear_null_control
from .hum import minimize_j
from .model import ControlRegion, Grid
from .solver import ControlSignal, RightBoundaryData, StateTrajectory

DEFAULT_EXTENSION = 0.25
DEFAULT_OMEGA_BAR = (1.05, 1.20)


@dataclass
class ExtendedProblem:
    """Problem on ``(0, 1 + extension)`` with zero-extended data.

    ``trace_index`` is the position of ``x = 1`` among the interior nodes of
    the extended grid.
    """

    base: SemilinearProblem
    problem: SemilinearProblem
    extension: float
    trace_index: int

    @property
    def grid(self) -> Grid:
        return self.problem.grid

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Columns belonging to the interior of ``(0, 1)``."""
        return np.asarray(u)[..., :self.trace_index]


def extend_problem(problem: SemilinearProblem, eps_ext: float = DEFAULT_EXTENSION,
                   omega_bar=DEFAULT_OMEGA_BAR) -> ExtendedProblem:
    """Extend ``problem`` to ``(0, 1 + eps_ext)`` with the control moved to ``omega_bar``.

    ``eps_ext`` must be an integer multiple of the grid spacing so that the
    extended grid has the same spacing and a node at ``x = 1``.
    """
    base_grid = problem.grid
    if abs(base_grid.length - 1.0) > 1e-15:
        raise ValueError("the problem to extend must live on (0, 1)")
    if not eps_ext > 0:
        raise ValueError(f"extension must be positive, got {eps_ext}")
    region = omega_bar if isinstance(omega_bar, ControlRegion) else ControlRegion(*omega_bar)
    region.require_inside(1.0, 1.0 + eps_ext)
    ratio = eps_ext / base_grid.h
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"extension {eps_ext} is not a multiple of h = {base_grid.h}")
    n = base_grid.n_interior
    grid = Grid(n + m, 1.0 + eps_ext)
    pad = np.zeros(m)
    ext = replace(problem, grid=grid, region=region, support=1.0,
                  y0=np.concatenate([problem.y0, pad]), z0=np.concatenate([problem.z0, pad]))
    if not ext.region.indicator(grid).any():
        raise ValueError("extended control region contains no grid node")
    return ExtendedProblem(problem, ext, float(eps_ext), n)


@dataclass(frozen=True)
class BoundaryControls:
    t: np.ndarray
    h1: np.ndarray
    h2: np.ndarray

    def as_boundary_data(self) -> RightBoundaryData:
        return RightBoundaryData(self.h1, self.h2)

    def write_csv(self, path, comment: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "h1", "h2"])
            for row in zip(self.t, self.h1, self.h2):
                writer.writerow([repr(float(v)) for v in row])


@dataclass
class ExtendedRun:
    extended: ExtendedProblem
    trajectory: StateTrajectory
    nu: ControlSignal
    semilinear: bool
    details: dict


def control_extended(extended: ExtendedProblem, semilinear: bool = False, epsilon: float = 1e-6,
                     config: Optional[FixedPointConfig] = None) -> ExtendedRun:
    """Interior control on the extended interval (frozen-at-zero HUM or fixed point)."""
    prob = extended.problem
    if semilinear:
        config = config or FixedPointConfig(epsilon=epsilon)
        result = solve_semilinear_null_control(prob, config)
        traj = result.validation.trajectory
        return ExtendedRun(extended, traj, result.nu, True, result.summary())
    hum = minimize_j(prob.penalized(prob.linearized_at_zero(), epsilon))
    details = {"cg_iterations": hum.cg_iterations, "converged": hum.converged,
               "control_norm": hum.control_norm}
    return ExtendedRun(extended, hum.trajectory, hum.nu, False, details)


def derive_boundary_controls(run: ExtendedRun) -> BoundaryControls:
    """Traces ``y(1, t), z(1, t)`` of the extended controlled state at the time nodes."""
    k = run.extended.trace_index
    traj = run.trajectory
    return BoundaryControls(traj.time_grid.t, traj.y[:, k].copy(), traj.z[:, k].copy())


def solve_with_boundary_controls(problem: SemilinearProblem, controls: BoundaryControls,
                                 semilinear: bool = False) -> StateTrajectory:
    """Inhomogeneous-Dirichlet solve on ``(0, 1)`` with data ``controls`` at ``x = 1``."""
    n_t = problem.time_grid.n_steps + 1
    if controls.h1.shape != (n_t,) or controls.h2.shape != (n_t,):
        raise ValueError("boundary data must be sampled at every time node")
    data = controls.as_boundary_data()
    if semilinear:
        return problem.linear_system().forward_semilinear(
            problem.coupling, None, problem.y0, problem.z0, data)
    return problem.linearized_at_zero().forward(None, problem.y0, problem.z0, data)


@dataclass(frozen=True)
class RoundTripReport:
    relative_error: float
    terminal_norm_round_trip: float
    terminal_norm_extended: float
    n_interior: int

    def to_json(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v) for k, v in vars(self).items()}


def round_trip(problem: SemilinearProblem, eps_ext: float = DEFAULT_EXTENSION,
               omega_bar=DEFAULT_OMEGA_BAR, semilinear: bool = False, epsilon: float = 1e-6,
               config: Optional[FixedPointConfig] = None):
    """Extend, control, extract traces and re-solve on ``(0, 1)``.

    Returns ``(controls, report, run, restricted_solution)``; the error is the
    relative ``L2(Q)`` distance between the re-solved state and the
    restriction of the extended state.
    """
    extended = extend_problem(problem, eps_ext, omega_bar)
    run = control_extended(extended, semilinear, epsilon, config)
    controls = derive_boundary_controls(run)
    traj = solve_with_boundary_controls(problem, controls, semilinear)
    restricted = StateTrajectory(extended.restrict(run.trajectory.y),
                                 extended.restrict(run.trajectory.z), problem.grid,
                                 problem.time_grid)
    scale = restricted.l2q_norm()
    err = traj.l2q_distance(restricted)
    report = RoundTripReport(err / scale if scale > 0 else err, traj.terminal_norm(),
                             restricted.terminal_norm(), problem.grid.n_interior)
    return controls, report, run, traj
