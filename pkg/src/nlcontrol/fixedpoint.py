"""Picard iteration for a null control of the semilinear system.

One application of the map ``Phi``: freeze the coupling along a candidate
trajectory, solve the penalised HUM problem for the frozen linear system,
return the controlled trajectory.  Because the coupling is frozen at the
step-midpoint states, a discrete fixed point of ``Phi`` is an exact
solution of the semilinear Crank-Nicolson scheme driven by its control.
Convergence is not guaranteed; it is reported, never assumed.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hum import HumResult, PenalizedProblem, minimize_j
from .model import (
    ControlRegion,
    CouplingSpec,
    Grid,
    SystemCoefficients,
    TimeGrid,
    check_c_nonvanishing,
    freeze_coefficients,
)
from .solver import ControlSignal, LinearSystem, StateTrajectory, wprime_norm

log = logging.getLogger(__name__)


class DataTooLargeError(ValueError):
    """Initial data violate the smallness gate ``||y0|| + ||z0|| < delta``."""


class FixedPointDivergence(RuntimeError):
    """Raised when the iteration is judged divergent; carries the partial result."""

    def __init__(self, message: str, partial: "FixedPointResult"):
        super().__init__(message)
        self.partial = partial


@dataclass
class FixedPointConfig:
    delta_smallness: float = 1e-2
    max_outer_iterations: int = 30
    outer_tolerance: float = 1e-8
    epsilon: float = 1e-6
    epsilon_schedule: Optional[Sequence[float]] = None
    start_from_zero: bool = False
    allow_large_data: bool = False
    divergence_window: int = 5
    ball_factor: float = 10.0
    validation_factor: float = 10.0
    cg_tol: float = 1e-10
    cg_max_iter: int = 2000

    def __post_init__(self):
        if not self.delta_smallness > 0:
            raise ValueError("delta_smallness must be positive")
        if not self.outer_tolerance > 0:
            raise ValueError("outer_tolerance must be positive")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.epsilon_schedule is not None:
            eps = list(self.epsilon_schedule)
            if not eps or any(e <= 0 for e in eps) or any(b > a for a, b in zip(eps, eps[1:])):
                raise ValueError("epsilon_schedule must be positive and non-increasing")

    def epsilon_at(self, k: int) -> float:
        """Penalty used on outer iterate ``k`` (1-based); the schedule's last value repeats."""
        if self.epsilon_schedule is None:
            return self.epsilon
        eps = list(self.epsilon_schedule)
        return eps[min(k - 1, len(eps) - 1)]


@dataclass
class SemilinearProblem:
    coeffs: SystemCoefficients
    kernels: tuple
    grid: Grid
    time_grid: TimeGrid
    region: ControlRegion
    coupling: CouplingSpec
    y0: np.ndarray
    z0: np.ndarray
    two_controls: bool = False
    c_margin: float = 1e-6
    support: float = 1.0

    def __post_init__(self):
        self.kernels = tuple(self.kernels)
        self.y0 = np.asarray(self.y0, dtype=float)
        self.z0 = np.asarray(self.z0, dtype=float)

    @property
    def data_norm(self) -> float:
        return self.grid.l2_norm(self.y0) + self.grid.l2_norm(self.z0)

    def linear_system(self, frozen=None) -> LinearSystem:
        return LinearSystem(self.coeffs, self.kernels, self.grid, self.time_grid, frozen,
                            self.support)

    def frozen_system(self, traj: StateTrajectory) -> LinearSystem:
        ym, zm = traj.midpoints()
        return self.linear_system(freeze_coefficients(self.coupling, ym, zm))

    def penalized(self, system: LinearSystem, epsilon: float, tol: float = 1e-10,
                  max_iter: int = 2000) -> PenalizedProblem:
        return PenalizedProblem(system, self.region, self.y0, self.z0, epsilon,
                                self.two_controls, tol, max_iter, self.c_margin)

    def linearized_at_zero(self) -> LinearSystem:
        """Frozen system at the zero trajectory (constant coefficients)."""
        return self.frozen_system(self.zero_state())

    def zero_state(self) -> StateTrajectory:
        shape = (self.time_grid.n_steps + 1, self.grid.n_interior)
        return StateTrajectory(np.zeros(shape), np.zeros(shape), self.grid, self.time_grid)

    def uncontrolled(self) -> StateTrajectory:
        return self.linear_system().forward_semilinear(self.coupling, None, self.y0, self.z0)

    def zero_trajectory(self) -> StateTrajectory:
        shape = (self.time_grid.n_steps + 1, self.grid.n_interior)
        y = np.zeros(shape)
        z = np.zeros(shape)
        y[0], z[0] = self.y0, self.z0
        return StateTrajectory(y, z, self.grid, self.time_grid)


def apply_phi(problem: SemilinearProblem, trajectory: StateTrajectory, epsilon: float,
              initial: Optional[ControlSignal] = None, tol: float = 1e-10,
              max_iter: int = 2000) -> tuple[StateTrajectory, ControlSignal, HumResult]:
    """Freeze along ``trajectory``, solve the penalised problem, return its trajectory and control."""
    system = problem.frozen_system(trajectory)
    result = minimize_j(problem.penalized(system, epsilon, tol, max_iter), initial)
    return result.trajectory, result.nu, result


@dataclass
class ValidationReport:
    terminal_norms: tuple
    terminal_norm: float
    trajectory_residual: float
    trajectory: StateTrajectory

    def to_json(self) -> dict:
        return {"terminal_norm_y": float(self.terminal_norms[0]),
                "terminal_norm_z": float(self.terminal_norms[1]),
                "terminal_norm": float(self.terminal_norm),
                "trajectory_residual": float(self.trajectory_residual)}


def verify_candidate(problem: SemilinearProblem, nu: ControlSignal,
                     reference: Optional[StateTrajectory] = None) -> ValidationReport:
    """Run the semilinear dynamics under ``nu`` and measure the terminal state.

    ``trajectory_residual`` is the relative ``L2(Q)`` distance to ``reference``
    (the last Picard iterate), 0 when no reference is given.
    """
    traj = problem.linear_system().forward_semilinear(problem.coupling, nu, problem.y0, problem.z0)
    residual = 0.0
    if reference is not None:
        scale = max(traj.l2q_norm(), reference.l2q_norm())
        residual = traj.l2q_distance(reference) / scale if scale > 0 else 0.0
    return ValidationReport(traj.terminal_norms(), traj.terminal_norm(), residual, traj)


@dataclass
class FixedPointResult:
    nu: Optional[ControlSignal]
    trajectory: Optional[StateTrajectory]
    distances: list = field(default_factory=list)
    radius_history: list = field(default_factory=list)
    control_norms: list = field(default_factory=list)
    empirical_c: list = field(default_factory=list)
    linear_terminal_norm: float = 0.0
    iterations: int = 0
    iteration_converged: bool = False
    validation: Optional[ValidationReport] = None
    validation_passed: bool = False
    log_records: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.iteration_converged and self.validation_passed

    @property
    def terminal_norms(self):
        return None if self.validation is None else self.validation.terminal_norms

    @property
    def control_constant(self) -> float:
        """One constant ``C`` with ``||nu_k|| <= C (||y0|| + ||z0||)`` for every iterate."""
        return max(self.empirical_c, default=0.0)

    def summary(self) -> dict:
        out = {
            "iterations": self.iterations,
            "iteration_converged": self.iteration_converged,
            "validation_passed": self.validation_passed,
            "converged": self.converged,
            "distances": [float(d) for d in self.distances],
            "radius_history": [float(r) for r in self.radius_history],
            "control_norms": [float(c) for c in self.control_norms],
            "control_constant": float(self.control_constant),
            "linear_terminal_norm": float(self.linear_terminal_norm),
            "checked_conditions": CHECKED_CONDITIONS,
        }
        if self.validation is not None:
            out["validation"] = self.validation.to_json()
        return out


CHECKED_CONDITIONS = [
    "frozen c~ bounded away from zero on the closure of omega at every iterate (single control)",
    "frozen coefficients bounded by M; smoothness of c~ beyond boundedness is not checked",
    "dG/dr nonzero away from the frozen iterates is not checked",
]


def _relative_distance(new: StateTrajectory, old: StateTrajectory) -> float:
    scale = max(new.l2q_norm(), old.l2q_norm())
    return new.l2q_distance(old) / scale if scale > 0 else 0.0


def check_data_gate(problem: SemilinearProblem, config: FixedPointConfig) -> float:
    size = problem.data_norm
    if size >= config.delta_smallness:
        msg = (f"||y0|| + ||z0|| = {size:.4g} is not below delta = {config.delta_smallness:.4g}")
        if not config.allow_large_data:
            raise DataTooLargeError(msg)
        warnings.warn(msg + "; continuing because the gate is overridden")
    return size


def solve_semilinear_null_control(problem: SemilinearProblem,
                                  config: Optional[FixedPointConfig] = None,
                                  log_path=None) -> FixedPointResult:
    """Picard iteration on ``Phi`` followed by validation on the semilinear dynamics.

    Raises
    ------
    DataTooLargeError
        Data above the smallness gate (unless overridden).
    FixedPointDivergence
        Successive distances grew ``divergence_window`` times in a row, or the
        trajectory radius left the monitored ball.
    """
    config = config or FixedPointConfig()
    size = check_data_gate(problem, config)
    g, tg = problem.grid, problem.time_grid

    if not problem.two_controls:
        ym, zm = problem.zero_state().midpoints()
        check = check_c_nonvanishing(freeze_coefficients(problem.coupling, ym, zm),
                                     problem.region, g, problem.c_margin)
        if not check.ok:
            log.warning("frozen c~ at the zero trajectory is %.3g on the closure of omega",
                        check.min_abs_c)

    current = problem.zero_trajectory() if config.start_from_zero else problem.uncontrolled()
    result = FixedPointResult(None, None)
    result.radius_history.append(wprime_norm(current.y, g, tg) + wprime_norm(current.z, g, tg))
    radius_cap = config.ball_factor * max(result.radius_history[0], np.finfo(float).tiny)
    nu = None
    hum = None
    increases = 0
    handle = open(log_path, "w") if log_path is not None else None
    try:
        for k in range(1, config.max_outer_iterations + 1):
            eps = config.epsilon_at(k)
            new, nu, hum = apply_phi(problem, current, eps, nu, config.cg_tol, config.cg_max_iter)
            dist = _relative_distance(new, current)
            radius = wprime_norm(new.y, g, tg) + wprime_norm(new.z, g, tg)
            c_emp = hum.control_norm / size if size > 0 else 0.0
            if result.distances and dist > result.distances[-1]:
                increases += 1
            else:
                increases = 0
            result.distances.append(dist)
            result.radius_history.append(radius)
            result.control_norms.append(hum.control_norm)
            result.empirical_c.append(c_emp)
            result.iterations = k
            result.nu, result.trajectory = nu, new
            result.linear_terminal_norm = hum.trajectory.terminal_norm()
            record = {"iterate": k, "epsilon": eps, "distance": dist,
                      "control_norm": hum.control_norm, "radius": radius,
                      "empirical_C": c_emp, "cg_iterations": hum.cg_iterations}
            result.log_records.append(record)
            if handle is not None:
                handle.write(json.dumps(record) + "\n")
            log.info("outer %d: distance %.3e, |nu| %.3e", k, dist, hum.control_norm)
            current = new
            if dist <= config.outer_tolerance:
                result.iteration_converged = True
                break
            if increases >= config.divergence_window:
                raise FixedPointDivergence(
                    f"successive distances increased {increases} times in a row", result)
            if radius > radius_cap:
                raise FixedPointDivergence(
                    f"trajectory radius {radius:.3g} left the ball of radius {radius_cap:.3g}",
                    result)
    finally:
        if handle is not None:
            handle.close()

    if not result.iteration_converged:
        log.warning("fixed-point iteration stopped after %d iterates without converging",
                    result.iterations)
    result.validation = verify_candidate(problem, nu, current)
    gate = config.validation_factor * result.linear_terminal_norm
    result.validation_passed = bool(result.validation.terminal_norm <= max(gate, 1e-300)
                                    or result.validation.terminal_norm == 0.0)
    return result
