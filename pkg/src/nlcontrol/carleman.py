"""Carleman weight family and numerical checks of the kernel decay hypotheses.

Weights, for a profile ``eta0`` with ``E = ||eta0||_inf`` and ``kappa > 0``::

    sigma(x)  = exp(4 kappa E) - exp(kappa (2E + eta0(x)))
    alpha(x,t) = sigma(x) / (t (T - t))
    xi(x,t)    = exp(kappa (2E + eta0(x))) / (t (T - t))

Both blow up at ``t = 0`` and ``t = T``; they are only evaluated inside.
Suprema over time are taken in log space so that the products
``exp(2 sigma / (t(T-t))) * lambda(t)^2`` never overflow before being
compared with the overflow threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ControlRegion, Grid, KernelSpec, TimeGrid

# exp(x) with x above this is reported as +inf.
OVERFLOW_EXPONENT = 700.0
DEFAULT_DELTABAR = 1e-2


@dataclass(frozen=True)
class WeightProfile:
    """``eta0 = 4 phi (1 - phi)`` with ``phi(x) = x / (x + r (1 - x))``.

    ``phi`` is a smooth increasing bijection of ``[0, 1]`` with
    ``phi(center) = 1/2``, so ``eta0`` vanishes exactly at both ends, is
    positive inside, peaks at ``center`` with value 1 and has no other
    critical point.
    """

    grid: Grid
    region: ControlRegion
    center: float
    ratio: float
    x: np.ndarray
    eta0: np.ndarray
    eta0_prime: np.ndarray
    eta0_max: float
    derivative_margin: float

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return x / (x + self.ratio * (1.0 - x))

    def evaluate(self, x):
        p = self.phi(x)
        return 4.0 * p * (1.0 - p)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.phi(x)
        dp = self.ratio / (x + self.ratio * (1.0 - x)) ** 2
        return 4.0 * (1.0 - 2.0 * p) * dp

    def min_abs_derivative_outside(self, x=None) -> float:
        """``min |eta0'|`` over the given points (default grid nodes) outside omega."""
        x = self.x if x is None else np.asarray(x, dtype=float)
        outside = ~self.region.contains(x)
        return float(np.min(np.abs(self.derivative(x[outside]))))


def build_eta0(grid: Grid, omega: ControlRegion, margin: float = 1e-3) -> WeightProfile:
    """Profile with its single critical point at the midpoint of omega."""
    omega.require_inside(0.0, 1.0)
    if abs(grid.length - 1.0) > 1e-15:
        raise ValueError("build_eta0 needs a grid of (0, 1)")
    center = omega.midpoint
    ratio = center / (1.0 - center)
    x = grid.x_full
    profile = WeightProfile(grid, omega, center, ratio, x, np.empty(0), np.empty(0), 1.0, margin)
    eta0 = profile.evaluate(x)
    eta0[0] = 0.0
    eta0[-1] = 0.0
    object.__setattr__(profile, "eta0", eta0)
    object.__setattr__(profile, "eta0_prime", profile.derivative(x))
    worst = profile.min_abs_derivative_outside()
    if not worst > margin:
        raise ValueError(
            f"|eta0'| = {worst:.3g} outside omega is not above the margin {margin}")
    return profile


def _t_factor(t, T):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t >= T):
        raise ValueError("Carleman weights are only defined for 0 < t < T")
    return t * (T - t)


@dataclass(frozen=True)
class CarlemanWeights:
    """Weights sampled on all space nodes (endpoints included) x interior time nodes."""

    profile: WeightProfile
    time_grid: TimeGrid
    kappa: float
    s: float
    sigma: np.ndarray
    t: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    sigma_minus: float
    sigma_plus: float

    @property
    def grid(self) -> Grid:
        return self.profile.grid

    @property
    def T(self) -> float:
        return self.time_grid.T

    def sigma_at(self, x):
        E = self.profile.eta0_max
        k = self.kappa
        return np.exp(4 * k * E) - np.exp(k * (2 * E + self.profile.evaluate(x)))

    def alpha_at(self, x, t):
        return self.sigma_at(x) / _t_factor(t, self.T)

    def xi_at(self, x, t):
        E = self.profile.eta0_max
        return np.exp(self.kappa * (2 * E + self.profile.evaluate(x))) / _t_factor(t, self.T)

    def alpha_minus(self, t):
        return self.sigma_minus / _t_factor(t, self.T)

    def alpha_plus(self, t):
        return self.sigma_plus / _t_factor(t, self.T)

    def xi_minus(self, t):
        E = self.profile.eta0_max
        return np.exp(2 * self.kappa * E) / _t_factor(t, self.T)

    def xi_plus(self, t):
        E = self.profile.eta0_max
        return np.exp(3 * self.kappa * E) / _t_factor(t, self.T)

    def table_rows(self):
        """Rows ``(x, t, sigma, alpha, xi)`` for export, time-major."""
        for k, t in enumerate(self.t):
            for i, x in enumerate(self.profile.x):
                yield x, t, self.sigma[i], self.alpha[k, i], self.xi[k, i]


def build_weights(profile: WeightProfile, kappa: float, s: float,
                  time_grid: TimeGrid) -> CarlemanWeights:
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    E = profile.eta0_max
    inner = np.exp(kappa * (2 * E + profile.eta0))
    sigma = np.exp(4 * kappa * E) - inner
    t = time_grid.interior
    tt = _t_factor(t, time_grid.T)
    alpha = sigma[None, :] / tt[:, None]
    xi = inner[None, :] / tt[:, None]
    # eta0 attains both 0 (ends) and E (center of omega), so the extrema are exact.
    sigma_plus = float(np.exp(4 * kappa * E) - np.exp(2 * kappa * E))
    sigma_minus = float(np.exp(4 * kappa * E) - np.exp(3 * kappa * E))
    return CarlemanWeights(profile, time_grid, kappa, s, sigma, t, alpha, xi,
                           sigma_minus, sigma_plus)


@dataclass(frozen=True)
class GapReport:
    passed: bool
    margin: float
    sigma_margin: float


def check_alpha_gap(weights: CarlemanWeights) -> GapReport:
    """``alpha+(t) < 2 alpha-(t)`` on the sampled times.

    ``margin`` is ``min_t (2 alpha-(t) - alpha+(t))``; the time factor
    cancels, so the sign is that of ``sigma_margin = 2 sigma- - sigma+``.
    """
    t = weights.t
    gap = 2 * weights.alpha_minus(t) - weights.alpha_plus(t)
    margin = float(gap.min())
    return GapReport(bool(margin > 0), margin, 2 * weights.sigma_minus - weights.sigma_plus)


def probe_times(time_grid: TimeGrid, refine: int = 4, levels: int = 8) -> np.ndarray:
    """Interior nodes plus refined samples next to both endpoints.

    The first and last steps are subdivided ``refine`` times and then
    ``levels`` geometric probes ``dt / refine^k`` approach each endpoint,
    where the exponential weights blow up.
    """
    dt, T = time_grid.dt, time_grid.T
    near = [dt * j / refine for j in range(1, refine)]
    near += [dt / refine ** k for k in range(2, levels + 2)]
    near = np.asarray(near)
    t = np.concatenate([near, time_grid.interior, T - near])
    t = np.unique(t[(t > 0) & (t < T)])
    return t


@dataclass
class HypothesisReport:
    """Decay-hypothesis outcome; ``kbar`` / ``h2_sup`` are ``inf`` on overflow."""

    kbar: Optional[float] = None
    h2_sup: Optional[float] = None
    h2_threshold: float = DEFAULT_DELTABAR
    pass_h0: Optional[bool] = None
    pass_h2: Optional[bool] = None
    argmax_t: Optional[float] = None
    details: dict = field(default_factory=dict)

    def merge(self, other: "HypothesisReport") -> "HypothesisReport":
        out = HypothesisReport(**vars(self))
        for key, value in vars(other).items():
            if key == "details":
                out.details = {**self.details, **value}
            elif value is not None and key != "h2_threshold":
                setattr(out, key, value)
        if other.h2_sup is not None:
            out.h2_threshold = other.h2_threshold
        return out

    def to_json(self) -> dict:
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {
            "kbar": num(self.kbar),
            "kbar_infinite": bool(self.kbar is not None and not np.isfinite(self.kbar)),
            "h2_sup": num(self.h2_sup),
            "h2_sup_infinite": bool(self.h2_sup is not None and not np.isfinite(self.h2_sup)),
            "h2_threshold": float(self.h2_threshold),
            "pass_h0": self.pass_h0,
            "pass_h2": self.pass_h2,
            "argmax_t": num(self.argmax_t),
        }


def _sup_of_log_terms(log_terms: np.ndarray, t: np.ndarray):
    """Maximum of ``exp(log_terms)`` with overflow flagged as ``inf``."""
    k = int(np.argmax(log_terms))
    top = float(log_terms[k])
    if top > OVERFLOW_EXPONENT:
        return np.inf, float(t[k])
    return float(np.exp(top)), float(t[k])


def check_h0(kernel: KernelSpec, sigma_minus: float, time_grid: TimeGrid,
             refine: int = 4, n_quad: int = 4001) -> HypothesisReport:
    """``Kbar = sup_t exp(2 sigma- / (t(T-t))) lambda(t)^2 int_{-1}^{1} J^2``."""
    t = probe_times(time_grid, refine)
    j2 = kernel.l2_norm_sq(-1.0, 1.0, n_quad)
    if j2 == 0.0 or kernel.is_zero:
        return HypothesisReport(kbar=0.0, pass_h0=True, argmax_t=float(t[len(t) // 2]),
                                details={"j_l2_sq": j2})
    with np.errstate(divide="ignore"):
        log_terms = 2 * sigma_minus / (t * (time_grid.T - t)) + 2 * kernel.profile.log_abs(t) \
            + np.log(j2)
    kbar, argmax_t = _sup_of_log_terms(log_terms, t)
    return HypothesisReport(kbar=kbar, pass_h0=bool(np.isfinite(kbar)), argmax_t=argmax_t,
                            details={"j_l2_sq": j2})


def shifted_l2_sq(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    """``int_0^1 J(x - z)^2 dz`` at every node ``x`` of ``[0, 1]`` (trapezoid in ``z``)."""
    _, values = kernel.table(grid)
    n = grid.n_interior
    i = np.arange(n + 2)
    table = values[(i[:, None] - i[None, :]) + n + 1] ** 2
    w = np.full(n + 2, grid.h)
    w[[0, -1]] *= 0.5
    return table @ w


def check_h2(kernel1: KernelSpec, weights: CarlemanWeights,
             deltabar: float = DEFAULT_DELTABAR, refine: int = 4) -> HypothesisReport:
    """``sup_(x,t) exp(2 s alpha-(t)) lambda1(t)^2 int_0^1 J1(x - z)^2 dz < deltabar``."""
    t = probe_times(weights.time_grid, refine)
    spatial = float(np.max(shifted_l2_sq(kernel1, weights.grid)))
    if spatial == 0.0 or kernel1.is_zero:
        return HypothesisReport(h2_sup=0.0, h2_threshold=deltabar, pass_h2=True,
                                argmax_t=float(t[len(t) // 2]))
    with np.errstate(divide="ignore"):
        log_terms = 2 * weights.s * weights.alpha_minus(t) + 2 * kernel1.profile.log_abs(t) \
            + np.log(spatial)
    sup, argmax_t = _sup_of_log_terms(log_terms, t)
    return HypothesisReport(h2_sup=sup, h2_threshold=deltabar,
                            pass_h2=bool(np.isfinite(sup) and sup < deltabar), argmax_t=argmax_t,
                            details={"max_shifted_l2_sq": spatial})


def default_s(a_max: float, T: float, kbar: float, c0: float = 1.0) -> float:
    """``c0 (aT + (aT)^2 + Kbar^(2/3) T^2)``, the lower threshold shape for ``s``."""
    if not np.isfinite(kbar):
        raise ValueError("cannot size s: Kbar is infinite")
    aT = a_max * T
    return c0 * (aT + aT ** 2 + kbar ** (2.0 / 3.0) * T ** 2)


def carleman_functional(field_values: np.ndarray, weights: CarlemanWeights) -> float:
    """Discrete weighted energy of a node-sampled field ``(n_steps+1, n_interior)``.

    ``s^-1 int e^{-2 s alpha} xi^-1 (|z_t|^2 + |z_xx|^2) + s kappa^2 int e^{-2 s alpha} xi |z_x|^2
    + s^3 kappa^4 int e^{-2 s alpha} xi^3 |z|^2``, central differences, summed over nodes
    whose whole stencil lies in the sampled field (interior times, space nodes
    ``2 .. n_interior - 1``) with weight ``dt h``.
    """
    z = np.asarray(field_values, dtype=float)
    grid, tg = weights.grid, weights.time_grid
    if z.shape != (tg.n_steps + 1, grid.n_interior):
        raise ValueError(f"field shape {z.shape} does not match the weight grids")
    if grid.n_interior < 3 or tg.n_steps < 2:
        raise ValueError("field too small for the difference stencils")
    h, dt, s, k = grid.h, tg.dt, weights.s, weights.kappa
    core = z[1:-1, 1:-1]
    z_t = (z[2:, 1:-1] - z[:-2, 1:-1]) / (2 * dt)
    z_x = (z[1:-1, 2:] - z[1:-1, :-2]) / (2 * h)
    z_xx = (z[1:-1, 2:] - 2 * core + z[1:-1, :-2]) / h ** 2
    # weights.alpha columns include the two boundary nodes; interior node i sits at column i + 1.
    alpha = weights.alpha[:, 2:-2]
    xi = weights.xi[:, 2:-2]
    damp = np.exp(-2 * s * alpha)
    total = (np.sum(damp / xi * (z_t ** 2 + z_xx ** 2)) / s
             + s * k ** 2 * np.sum(damp * xi * z_x ** 2)
             + s ** 3 * k ** 4 * np.sum(damp * xi ** 3 * core ** 2))
    return float(total * dt * h)
