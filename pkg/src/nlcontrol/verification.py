"""Reference solutions for solver verification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FrozenCoefficients, Grid, KernelSpec, SystemCoefficients, TimeGrid
from .solver import ControlSignal, LinearSystem


@dataclass(frozen=True)
class ErrorReport:
    n_interior: int
    n_steps: int
    abs_error: float
    rel_error: float


def heat_mode_error(n_interior: int, n_steps: int, T: float = 1.0, a: float = 1.0,
                    mode: int = 1) -> ErrorReport:
    """Decoupled heat equation from ``sin(m pi x)`` against ``exp(-a m^2 pi^2 T) sin(m pi x)``."""
    grid, tg = Grid(n_interior), TimeGrid(n_steps, T)
    system = LinearSystem(SystemCoefficients(a1=a, a2=a), (KernelSpec.zero(), KernelSpec.zero()),
                          grid, tg)
    u0 = np.sin(mode * np.pi * grid.x)
    traj = system.forward(None, u0, np.zeros_like(u0))
    exact = np.exp(-a * (mode * np.pi) ** 2 * T) * u0
    err = grid.l2_norm(traj.y[-1] - exact)
    return ErrorReport(n_interior, n_steps, err, err / grid.l2_norm(exact))


def observed_orders(errors) -> np.ndarray:
    """``log2`` ratios of consecutive errors under halving of ``h`` and ``dt``."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def _nonlocal_of_sine(kernel: KernelSpec, x: np.ndarray, n_quad: int = 20001) -> np.ndarray:
    zeta = np.linspace(0.0, 1.0, n_quad)
    vals = np.asarray(kernel.j(zeta[None, :] - x[:, None])) * np.sin(np.pi * zeta)[None, :]
    return np.trapezoid(vals, zeta, axis=1)


def manufactured_error(n_interior: int, n_steps: int, coeffs: SystemCoefficients,
                       kernels, frozen_constants=(0.0, 0.0, 0.0, 0.0),
                       T: float = 1.0) -> ErrorReport:
    """Error against ``y = z = t sin(pi x)`` with the forcing injected as full-domain controls.

    The forcing of each step is evaluated at the step midpoint.
    """
    grid, tg = Grid(n_interior), TimeGrid(n_steps, T)
    a, b, c, d = frozen_constants
    frozen = FrozenCoefficients.constant((n_steps, n_interior), a, b, c, d)
    system = LinearSystem(coeffs, kernels, grid, tg, frozen)
    x = grid.x
    s, cs = np.sin(np.pi * x), np.cos(np.pi * x)
    tm = tg.midpoints[:, None]
    nl = [np.zeros_like(x) if k.is_zero else _nonlocal_of_sine(k, x) for k in kernels]
    lam = [np.asarray(k.lam(tg.midpoints))[:, None] for k in kernels]

    def residual(ai, bi, ci, which, self_coef, other_coef):
        local = ai * (-np.pi ** 2) * s + bi * np.pi * cs + ci * s
        return s - tm * (local + lam[which] * nl[which] + (self_coef + other_coef) * s)

    fy = residual(coeffs.a1, coeffs.b1, coeffs.c1, 0, a, b)
    fz = residual(coeffs.a2, coeffs.b2, coeffs.c2, 1, d, c)
    control = ControlSignal(fy, np.ones(n_interior), fz)
    traj = system.forward(control, np.zeros(n_interior), np.zeros(n_interior))
    exact = tg.t[:, None] * s[None, :]
    err = traj.l2q_distance(type(traj)(exact, exact, grid, tg))
    ref = type(traj)(exact, exact, grid, tg).l2q_norm()
    return ErrorReport(n_interior, n_steps, err, err / ref)
