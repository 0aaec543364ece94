"""Penalised HUM: the minimal-norm control with a terminal-state penalty.

For a frozen linear system and data ``(y0, z0)`` the functional is::

    J_eps(nu) = ||nu||^2_{L2(omega x (0,T))} + (1/eps) (||y(T)||^2 + ||z(T)||^2)

It is quadratic and strictly convex.  Its gradient (in the ``dt h``
inner product) is ``2 nu - 2 phi 1_omega`` where ``phi`` is the adjoint
started from ``-(1/eps) (y(T), z(T))``, so a minimiser satisfies
``nu = phi 1_omega``.  Minimisation is by linear conjugate gradients.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import ControlRegion, check_c_nonvanishing
from .solver import ControlSignal, LinearSystem, StateTrajectory

log = logging.getLogger(__name__)


class CouplingVanishesError(ValueError):
    """Single-control mode needs ``c~ != 0`` on the closure of omega."""


@dataclass
class PenalizedProblem:
    system: LinearSystem
    region: ControlRegion
    y0: np.ndarray
    z0: np.ndarray
    epsilon: float = 1e-6
    two_controls: bool = False
    tol: float = 1e-10
    max_iter: int = 2000
    c_margin: float = 1e-6
    check_coupling: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        n = self.system.grid.n_interior
        self.y0 = np.asarray(self.y0, dtype=float)
        self.z0 = np.asarray(self.z0, dtype=float)
        if self.y0.shape != (n,) or self.z0.shape != (n,):
            raise ValueError("initial data do not match the grid")
        self.mask = self.region.indicator(self.system.grid)
        if not self.mask.any():
            raise ValueError("control region contains no interior grid node")

    @property
    def grid(self):
        return self.system.grid

    @property
    def time_grid(self):
        return self.system.time_grid

    def data_norm_sq(self) -> float:
        g = self.grid
        return g.l2_norm(self.y0) ** 2 + g.l2_norm(self.z0) ** 2

    def zero_control(self) -> ControlSignal:
        return ControlSignal.zeros(self.mask, self.time_grid.n_steps, self.two_controls)

    def with_epsilon(self, epsilon: float, private_system: bool = False) -> "PenalizedProblem":
        """Same problem with another penalty; ``private_system`` gives it its own factorisation cache."""
        system = self.system.with_frozen(self.system.frozen) if private_system else self.system
        return PenalizedProblem(system, self.region, self.y0, self.z0, epsilon,
                                self.two_controls, self.tol, self.max_iter, self.c_margin,
                                self.check_coupling)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.time_grid.dt * self.grid.h * np.sum(u * v))

    def check_hypothesis(self) -> None:
        if self.two_controls or not self.check_coupling:
            return
        report = check_c_nonvanishing(self.system.frozen, self.region, self.grid, self.c_margin)
        if not report.ok:
            raise CouplingVanishesError(
                f"|c~| = {report.min_abs_c:.3g} <= {self.c_margin} on the closure of omega; "
                f"first offending (step, x): {report.offending[:5]}")


def _terminal_sq(traj: StateTrajectory) -> float:
    ny, nz = traj.terminal_norms()
    return ny ** 2 + nz ** 2


def evaluate_j(problem: PenalizedProblem, nu: ControlSignal) -> float:
    traj = problem.system.forward(nu, problem.y0, problem.z0)
    arr = nu.as_array()
    return problem.inner(arr, arr) + _terminal_sq(traj) / problem.epsilon


def _gradient(problem: PenalizedProblem, nu: ControlSignal, y0, z0):
    system = problem.system
    traj = system.forward(nu, y0, z0)
    eps = problem.epsilon
    adj = system.adjoint(-traj.y[-1] / eps, -traj.z[-1] / eps)
    obs = [adj.obs_phi] if not problem.two_controls else [adj.obs_phi, adj.obs_psi]
    grad = 2.0 * nu.as_array() - 2.0 * np.stack(obs) * problem.mask
    return grad, traj, adj


def gradient_j(problem: PenalizedProblem, nu: ControlSignal) -> ControlSignal:
    """Gradient of ``J_eps`` at ``nu`` in the ``dt h`` inner product."""
    grad, _, _ = _gradient(problem, nu, problem.y0, problem.z0)
    return ControlSignal.from_array(grad, problem.mask)


@dataclass
class HumResult:
    nu: ControlSignal
    trajectory: StateTrajectory
    terminal_norms: tuple
    control_norm: float
    j_value: float
    cg_iterations: int
    optimality_residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    epsilon: float = 0.0
    data_norm_sq: float = 0.0

    @property
    def terminal_norm_sq(self) -> float:
        return float(self.terminal_norms[0] ** 2 + self.terminal_norms[1] ** 2)

    @property
    def empirical_c(self) -> float:
        """``||nu||^2 / (||y0||^2 + ||z0||^2)``."""
        return self.control_norm ** 2 / self.data_norm_sq if self.data_norm_sq > 0 else 0.0

    @property
    def penalty_c(self) -> float:
        """Smallest ``C`` with ``||nu||^2/2 + ||(y,z)(T)||^2/eps <= C/2 (||y0||^2 + ||z0||^2)``."""
        if self.data_norm_sq == 0:
            return 0.0
        return (self.control_norm ** 2 + 2 * self.terminal_norm_sq / self.epsilon) / self.data_norm_sq


def minimize_j(problem: PenalizedProblem, initial: Optional[ControlSignal] = None) -> HumResult:
    """Conjugate gradients on ``J_eps``.

    The stopping test is on the relative gradient ``||grad J|| / (2 ||nu||)``,
    which equals the optimality residual ``||nu - phi 1_omega|| / ||nu||``.
    A passing recursive residual is confirmed against a freshly computed
    gradient; on disagreement CG restarts from the true residual.  The
    Hessian action is the gradient with zero initial data.  Hitting
    ``max_iter`` returns the current iterate with ``converged=False``.
    """
    problem.check_hypothesis()
    mask = problem.mask
    zero_y = np.zeros_like(problem.y0)
    norm = lambda v: np.sqrt(problem.inner(v, v))  # noqa: E731

    def hess(p: np.ndarray) -> np.ndarray:
        g, _, _ = _gradient(problem, ControlSignal.from_array(p, mask), zero_y, zero_y)
        return g

    def true_residual(x: np.ndarray) -> np.ndarray:
        g, _, _ = _gradient(problem, ControlSignal.from_array(x, mask), problem.y0, problem.z0)
        return -g

    def relative(r: np.ndarray, x: np.ndarray) -> float:
        nx = norm(x)
        if nx > 0:
            return norm(r) / (2 * nx)
        return 0.0 if norm(r) == 0 else 1.0

    x = (initial or problem.zero_control()).as_array().copy()
    r = true_residual(x)
    history = [relative(r, x)]
    iterations = 0
    converged = history[-1] <= problem.tol
    p = r.copy()
    rr = problem.inner(r, r)
    while not converged and iterations < problem.max_iter:
        hp = hess(p)
        curvature = problem.inner(p, hp)
        if curvature <= 0:
            log.warning("non-positive curvature %.3g at CG iteration %d", curvature, iterations)
            break
        step = rr / curvature
        x += step * p
        r -= step * hp
        iterations += 1
        history.append(relative(r, x))
        if history[-1] <= problem.tol:
            r = true_residual(x)
            history[-1] = relative(r, x)
            if history[-1] <= problem.tol:
                converged = True
                break
            p = r.copy()
            rr = problem.inner(r, r)
            continue
        rr_new = problem.inner(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if not converged:
        log.warning("CG stopped after %d iterations, relative residual %.3g",
                    iterations, history[-1])

    nu = ControlSignal.from_array(x, mask)
    grad, traj, adj = _gradient(problem, nu, problem.y0, problem.z0)
    nu_norm = nu.norm(problem.grid, problem.time_grid)
    # grad = 2 (nu - phi 1_omega)
    residual = norm(grad) / (2 * nu_norm) if nu_norm > 0 else 0.0
    arr = nu.as_array()
    return HumResult(
        nu=nu,
        trajectory=traj,
        terminal_norms=traj.terminal_norms(),
        control_norm=nu_norm,
        j_value=problem.inner(arr, arr) + _terminal_sq(traj) / problem.epsilon,
        cg_iterations=iterations,
        optimality_residual=float(residual),
        converged=converged,
        residual_history=[float(v) for v in history],
        epsilon=problem.epsilon,
        data_norm_sq=problem.data_norm_sq(),
    )


def dense_control_map(problem: PenalizedProblem):
    """Terminal state as an explicit affine map of the control entries on omega.

    Returns ``(Phi, U0, index)`` with ``U(T) = Phi @ v + U0`` where ``v`` lists
    the control values at ``index`` (positions in ``as_array()``).  Built
    column by column with forward solves only; used as an independent check
    of the adjoint-based minimiser.
    """
    system = problem.system
    base = system.forward(None, problem.y0, problem.z0)
    U0 = np.concatenate([base.y[-1], base.z[-1]])
    shape = problem.zero_control().as_array().shape
    support = np.broadcast_to(problem.mask.astype(bool), shape)
    index = np.argwhere(support)
    zeros = np.zeros_like(problem.y0)
    cols = []
    for idx in index:
        arr = np.zeros(shape)
        arr[tuple(idx)] = 1.0
        traj = system.forward(ControlSignal.from_array(arr, problem.mask), zeros, zeros)
        cols.append(np.concatenate([traj.y[-1], traj.z[-1]]))
    return np.array(cols).T, U0, index


def solve_dense(problem: PenalizedProblem) -> ControlSignal:
    """Minimiser from the normal equations of the dense quadratic form."""
    Phi, U0, index = dense_control_map(problem)
    dt, h, eps = problem.time_grid.dt, problem.grid.h, problem.epsilon
    lhs = dt * h * np.eye(Phi.shape[1]) + (h / eps) * Phi.T @ Phi
    rhs = -(h / eps) * Phi.T @ U0
    v = np.linalg.solve(lhs, rhs)
    arr = np.zeros(problem.zero_control().as_array().shape)
    arr[tuple(index.T)] = v
    return ControlSignal.from_array(arr, problem.mask)


@dataclass
class SweepRow:
    epsilon: float
    result: Optional[HumResult]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.result is not None


@dataclass
class SweepTable:
    rows: list

    COLUMNS = ("epsilon", "control_norm", "terminal_norm_sq", "empirical_C", "cg_iterations")

    def records(self):
        for row in self.rows:
            if row.ok:
                r = row.result
                yield (row.epsilon, r.control_norm, r.terminal_norm_sq, r.penalty_c,
                       r.cg_iterations)
            else:
                yield (row.epsilon, float("nan"), float("nan"), float("nan"), -1)

    def write_csv(self, path, comment: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for rec in self.records():
                writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in rec])


def epsilon_sweep(problem: PenalizedProblem, epsilons: Sequence[float],
                  threads: int = 1) -> SweepTable:
    """One minimisation per ``epsilon`` (strictly decreasing); failures are recorded.

    With ``threads > 1`` every member gets its own :class:`LinearSystem`, since
    cached LU factors must not be shared between threads.
    """
    eps = [float(e) for e in epsilons]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be positive and strictly decreasing")

    def run(e):
        try:
            return SweepRow(e, minimize_j(problem.with_epsilon(e, private_system=threads > 1)))
        except Exception as exc:  # a failed member must not stop the sweep
            log.error("sweep member eps=%g failed: %s", e, exc)
            return SweepRow(e, None, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, eps))
    else:
        rows = [run(e) for e in eps]
    return SweepTable(rows)


@dataclass(frozen=True)
class SweepAnalysis:
    """Gates on a sweep.

    ``tail_ratio`` is ``max/min ||nu_eps||`` over ``eps <= tail_eps``;
    ``halving_ratios`` rescale consecutive terminal-norm ratios to one
    halving of ``eps``; ``fitted_C`` is the largest penalty constant, which
    bounds ``||(y,z)(T)||^2 <= C eps (||y0||^2 + ||z0||^2)`` on every row, and
    ``c_saturation`` is the ratio of the last two penalty constants.
    """

    tail_ratio: float
    halving_ratios: tuple
    fitted_C: float
    c_saturation: float
    bound_holds: bool

    @property
    def max_halving_ratio(self) -> float:
        return max(self.halving_ratios, default=float("nan"))

    def passed(self, tail_max: float = 1.2, halving_max: float = 0.75,
               saturation_max: float = 1.2) -> bool:
        return bool(self.tail_ratio <= tail_max and self.max_halving_ratio <= halving_max
                    and self.c_saturation <= saturation_max and self.bound_holds)


def analyze_sweep(table: SweepTable, tail_eps: float = 1e-4) -> SweepAnalysis:
    rows = [r for r in table.rows if r.ok]
    if len(rows) < 2:
        raise ValueError("need at least two successful sweep rows")
    eps = np.array([r.epsilon for r in rows])
    nu = np.array([r.result.control_norm for r in rows])
    term = np.array([r.result.terminal_norm_sq for r in rows])
    pen = np.array([r.result.penalty_c for r in rows])
    data = rows[0].result.data_norm_sq
    tail = nu[eps <= tail_eps]
    tail_ratio = float(tail.max() / tail.min()) if tail.size and tail.min() > 0 else float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        halving = (term[1:] / term[:-1]) ** (np.log(2.0) / np.log(eps[:-1] / eps[1:]))
    fitted = float(pen.max())
    bound = bool(np.all(term <= fitted * eps * data * (1 + 1e-12)))
    return SweepAnalysis(tail_ratio, tuple(float(h) for h in halving), fitted,
                         float(pen[-1] / pen[-2]) if pen[-2] > 0 else float("nan"), bound)
