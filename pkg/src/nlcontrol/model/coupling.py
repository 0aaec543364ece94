"""Semilinear couplings ``F(y, z)``, ``G(y, z)`` and their frozen linearisation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import ControlRegion, Grid

Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]

GAUSS_NODES = 16


@dataclass(frozen=True)
class CouplingSpec:
    """Nonlinearities with their partial derivatives and global bound ``M``.

    All callables are vectorised over numpy arrays.  Construction checks
    ``F(0,0) = G(0,0) = 0`` and spot-checks the derivative bound on the box
    ``[-box, box]^2``.
    """

    F: Fn
    G: Fn
    dF_dr: Fn
    dF_ds: Fn
    dG_dr: Fn
    dG_ds: Fn
    bound_m: float
    name: str = "custom"
    params: tuple = ()
    box: float = 5.0

    def __post_init__(self):
        zero = np.zeros(1)
        if abs(float(self.F(zero, zero)[0])) > 1e-14 or abs(float(self.G(zero, zero)[0])) > 1e-14:
            raise ValueError(f"coupling {self.name}: F(0,0) and G(0,0) must vanish")
        side = np.linspace(-self.box, self.box, 41)
        r, s = np.meshgrid(side, side)
        worst = max(float(np.max(np.abs(d(r, s))))
                    for d in (self.dF_dr, self.dF_ds, self.dG_dr, self.dG_ds))
        if worst > self.bound_m * (1 + 1e-12) + 1e-300:
            raise ValueError(
                f"coupling {self.name}: sampled |partial| = {worst:.6g} exceeds M = {self.bound_m}")

    @property
    def is_zero(self) -> bool:
        return self.bound_m == 0.0

    def __call__(self, y, z):
        return self.F(y, z), self.G(y, z)


def linear_coupling(q11=0.0, q12=0.0, q21=0.0, q22=0.0, enforce_rates=False) -> CouplingSpec:
    """``F = q11 r + q12 s``, ``G = q21 r + q22 s`` (regime-switching transition terms).

    With ``enforce_rates`` the transition-rate structure is required:
    off-diagonal rates non-negative and each row summing to zero.
    """
    if enforce_rates:
        if q12 < 0 or q21 < 0:
            raise ValueError("transition rates q12, q21 must be non-negative")
        if abs(q11 + q12) > 1e-14 or abs(q21 + q22) > 1e-14:
            raise ValueError("transition rate rows must sum to zero")
    const = lambda c: (lambda r, s: np.full(np.broadcast(r, s).shape, float(c)))  # noqa: E731
    return CouplingSpec(
        F=lambda r, s: q11 * r + q12 * s,
        G=lambda r, s: q21 * r + q22 * s,
        dF_dr=const(q11), dF_ds=const(q12), dG_dr=const(q21), dG_ds=const(q22),
        bound_m=float(max(abs(q11), abs(q12), abs(q21), abs(q22))),
        name="linear", params=(("q11", q11), ("q12", q12), ("q21", q21), ("q22", q22)),
    )


def zero_coupling() -> CouplingSpec:
    c = linear_coupling()
    return CouplingSpec(c.F, c.G, c.dF_dr, c.dF_ds, c.dG_dr, c.dG_ds, 0.0, name="zero")


def _elementwise(name, f, df, fr, fs, gr, gs) -> CouplingSpec:
    return CouplingSpec(
        F=lambda r, s: fr * f(r) + fs * f(s),
        G=lambda r, s: gr * f(r) + gs * f(s),
        dF_dr=lambda r, s: fr * df(r) + 0.0 * s,
        dF_ds=lambda r, s: fs * df(s) + 0.0 * r,
        dG_dr=lambda r, s: gr * df(r) + 0.0 * s,
        dG_ds=lambda r, s: gs * df(s) + 0.0 * r,
        bound_m=float(max(abs(fr), abs(fs), abs(gr), abs(gs))),
        name=name, params=(("fr", fr), ("fs", fs), ("gr", gr), ("gs", gs)),
    )


def tanh_coupling(fr=0.0, fs=0.0, gr=0.0, gs=0.0) -> CouplingSpec:
    """``F = fr tanh(r) + fs tanh(s)``, ``G = gr tanh(r) + gs tanh(s)``."""
    return _elementwise("tanh", np.tanh, lambda u: 1.0 / np.cosh(u) ** 2, fr, fs, gr, gs)


def sin_coupling(fr=0.0, fs=0.0, gr=0.0, gs=0.0) -> CouplingSpec:
    """``F = fr sin(r) + fs sin(s)``, ``G = gr sin(r) + gs sin(s)``."""
    return _elementwise("sin_scaled", np.sin, np.cos, fr, fs, gr, gs)


REGISTRY = {
    "zero": zero_coupling,
    "linear": linear_coupling,
    "tanh": tanh_coupling,
    "sin_scaled": sin_coupling,
}


def make_coupling(name: str, **params) -> CouplingSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown coupling {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**params)


def decompose_coupling(coupling: CouplingSpec, r, s, n_nodes: int = GAUSS_NODES):
    """Line-integral coefficients with ``F = a r + b s`` and ``G = c r + d s``.

    ``a(r, s) = int_0^1 dF/dr(k r, k s) dk`` and likewise for ``b, c, d``,
    by Gauss-Legendre quadrature on ``[0, 1]``.  Works elementwise on arrays.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    kappa = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    out = []
    for deriv in (coupling.dF_dr, coupling.dF_ds, coupling.dG_dr, coupling.dG_ds):
        acc = np.zeros(np.broadcast(r, s).shape)
        for k, w in zip(kappa, weights):
            acc = acc + w * deriv(k * r, k * s)
        out.append(acc)
    return tuple(out)


@dataclass(frozen=True)
class FrozenCoefficients:
    """Space-time coefficient fields ``a~, b~, c~, d~`` of the linearised system.

    The solver reads them per time step (shape ``(n_steps, n_interior)``),
    sampled at step midpoints.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @classmethod
    def constant(cls, shape, a=0.0, b=0.0, c=0.0, d=0.0) -> "FrozenCoefficients":
        return cls(*(np.full(shape, float(v)) for v in (a, b, c, d)))

    @classmethod
    def zeros(cls, shape) -> "FrozenCoefficients":
        return cls.constant(shape)

    @property
    def shape(self):
        return self.a.shape

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(f)) for f in (self.a, self.b, self.c, self.d)))

    @property
    def time_invariant(self) -> bool:
        return all(bool(np.all(f == f[:1])) for f in (self.a, self.b, self.c, self.d))


def freeze_coefficients(coupling: CouplingSpec, ybar, zbar) -> FrozenCoefficients:
    """Evaluate the decomposition pointwise along a candidate trajectory."""
    ybar = np.asarray(ybar, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    if ybar.shape != zbar.shape:
        raise ValueError(f"ybar {ybar.shape} and zbar {zbar.shape} differ in shape")
    frozen = FrozenCoefficients(*decompose_coupling(coupling, ybar, zbar))
    if frozen.max_abs() > coupling.bound_m * (1 + 1e-10) + 1e-300:
        warnings.warn(f"frozen coefficients exceed M={coupling.bound_m}: {frozen.max_abs():.6g}")
    return frozen


@dataclass(frozen=True)
class CouplingCheck:
    """Outcome of the ``c~ != 0`` test on the closure of omega."""

    min_abs_c: float
    margin: float
    offending: list

    @property
    def ok(self) -> bool:
        return self.min_abs_c > self.margin


def check_c_nonvanishing(frozen: FrozenCoefficients, region: ControlRegion, grid: Grid,
                         margin: float = 1e-6) -> CouplingCheck:
    """Minimum of ``|c~|`` over nodes in the closure of omega, all time steps."""
    mask = region.contains_closure(grid.x)
    if not np.any(mask):
        raise ValueError("control region contains no grid node")
    block = np.abs(frozen.c[:, mask])
    bad = np.argwhere(block <= margin)
    xs = grid.x[mask]
    offending = [(int(k), float(xs[i])) for k, i in bad[:20]]
    return CouplingCheck(float(block.min()), margin, offending)
