"""Finite-difference and quadrature matrices on a :class:`Grid`."""
from __future__ import annotations

import numpy as np

from .grid import Grid
from .kernels import KernelSpec

_NODE_TOL = 1e-9


def assemble_spatial_operator(a: float, b: float, c: float, grid: Grid) -> np.ndarray:
    """Dense tridiagonal matrix of ``a u_xx + b u_x + c u`` with zero Dirichlet ends.

    Second-order central differences; out-of-domain neighbours are dropped.
    """
    if not a > 0:
        raise ValueError(f"diffusion coefficient must be positive, got a={a}")
    n, h = grid.n_interior, grid.h
    lower = a / h ** 2 - b / (2 * h)
    diag = -2 * a / h ** 2 + c
    upper = a / h ** 2 + b / (2 * h)
    mat = np.zeros((n, n))
    idx = np.arange(n)
    mat[idx, idx] = diag
    mat[idx[1:], idx[:-1]] = lower
    mat[idx[:-1], idx[1:]] = upper
    return mat


def right_boundary_column(a: float, b: float, grid: Grid) -> np.ndarray:
    """Coefficient of ``u(length, t)`` in each row of the spatial operator."""
    col = np.zeros(grid.n_interior)
    col[-1] = a / grid.h ** 2 + b / (2 * grid.h)
    return col


def quadrature_weights(grid: Grid, support: float = 1.0) -> np.ndarray:
    """Trapezoid weights of ``int_0^support`` at interior nodes.

    Nodes beyond ``support`` get zero weight; a node exactly at ``support``
    gets ``h/2``.  Boundary nodes carry zero values under Dirichlet data and
    are omitted.
    """
    x, h = grid.x, grid.h
    w = np.where(x < support - _NODE_TOL * h, h, 0.0)
    w[np.abs(x - support) <= _NODE_TOL * h] = 0.5 * h
    return w


def kernel_matrix(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    """``J(zeta_j - x_i)`` for interior nodes, read off the symmetric table."""
    _, values = kernel.table(grid)
    n = grid.n_interior
    i = np.arange(n)
    offset = i[None, :] - i[:, None]
    return values[offset + n + 1]


def assemble_nonlocal_operator(kernel: KernelSpec, grid: Grid, t: float,
                               support: float = 1.0, _jmat=None) -> np.ndarray:
    """Entry ``(i, j) = lambda(t) w_j J(zeta_j - x_i)``, trapezoid over ``(0, support)``."""
    lam = float(kernel.lam(t))
    if lam == 0.0 or kernel.is_zero:
        return np.zeros((grid.n_interior, grid.n_interior))
    jmat = kernel_matrix(kernel, grid) if _jmat is None else _jmat
    return lam * jmat * quadrature_weights(grid, support)[None, :]


def nonlocal_boundary_column(kernel: KernelSpec, grid: Grid, t: float) -> np.ndarray:
    """Trapezoid contribution ``lambda(t) (h/2) J(length - x_i)`` of ``u(length, t)``."""
    lam = float(kernel.lam(t))
    if lam == 0.0 or kernel.is_zero:
        return np.zeros(grid.n_interior)
    return lam * 0.5 * grid.h * np.asarray(kernel.j(grid.length - grid.x), dtype=float)
