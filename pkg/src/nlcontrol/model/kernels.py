"""Convolution kernels ``J`` and their time profiles ``lambda(t)``."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .grid import Grid


class ConstantProfile:
    """``lambda(t) = value``."""

    kind = "constant"

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)

    def log_abs(self, t):
        t = np.asarray(t, dtype=float)
        if self.value == 0.0:
            return np.full_like(t, -np.inf)
        return np.full_like(t, np.log(abs(self.value)))

    @property
    def time_invariant(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


class DecayProfile:
    """``lambda(t) = scale * exp(-rate / (t (T - t)))``, zero at ``t = 0, T``.

    This is the endpoint decay shape that makes the exponentially weighted
    kernel hypotheses finite.
    """

    kind = "decay"

    def __init__(self, rate: float, T: float, scale: float = 1.0):
        if rate < 0:
            raise ValueError(f"rate must be non-negative, got {rate}")
        self.rate = float(rate)
        self.T = float(T)
        self.scale = float(scale)

    def log_abs(self, t):
        t = np.asarray(t, dtype=float)
        tt = t * (self.T - t)
        out = np.full_like(t, -np.inf)
        inside = tt > 0
        if self.scale != 0.0:
            out[inside] = np.log(abs(self.scale)) - self.rate / tt[inside]
        return out

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.sign(self.scale) * np.exp(self.log_abs(t))

    @property
    def time_invariant(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rate": self.rate, "T": self.T, "scale": self.scale}


class PiecewiseProfile:
    """Piecewise constant: ``values[k]`` on ``[breaks[k-1], breaks[k])``.

    ``breaks`` are the interior switch times, so ``len(values) == len(breaks) + 1``.
    """

    kind = "piecewise"

    def __init__(self, breaks, values):
        self.breaks = np.asarray(breaks, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.size != self.breaks.size + 1:
            raise ValueError("piecewise profile needs len(values) == len(breaks) + 1")
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("piecewise breaks must be increasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.values[np.searchsorted(self.breaks, t, side="right")]

    def log_abs(self, t):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self(t)))

    @property
    def time_invariant(self) -> bool:
        return self.values.size == 1 or bool(np.all(self.values == self.values[0]))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "breaks": self.breaks.tolist(),
                "values": self.values.tolist()}


def make_profile(spec: dict, T: float, sigma_minus: Optional[float] = None):
    """Build a profile from a config mapping.

    ``{"kind": "decay", "rate_over_sigma_minus": c}`` sets ``rate = c * sigma_minus``.
    """
    kind = spec["kind"]
    if kind == "constant":
        return ConstantProfile(spec.get("value", 1.0))
    if kind == "decay":
        rate = spec.get("rate")
        rel = spec.get("rate_over_sigma_minus")
        if (rate is None) == (rel is None):
            raise ValueError("decay profile needs exactly one of rate, rate_over_sigma_minus")
        if rel is not None:
            if sigma_minus is None:
                raise ValueError("rate_over_sigma_minus requires sigma_minus")
            rate = rel * sigma_minus
        return DecayProfile(rate, T, spec.get("scale", 1.0))
    if kind == "piecewise":
        return PiecewiseProfile(spec["breaks"], spec["values"])
    raise ValueError(f"unknown lambda profile kind {kind!r}")


@dataclass(frozen=True)
class GaussianParams:
    C: float
    d: float
    k: float
    lam: float = 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.lam * self.C * np.exp(-(z - self.d) ** 2 / (2.0 * self.k ** 2))

    def l2_norm_sq(self, lo: float = -1.0, hi: float = 1.0) -> float:
        """Closed form of ``int_lo^hi J(z)^2 dz``."""
        from scipy.special import erf

        amp = (self.lam * self.C) ** 2
        scale = self.k * np.sqrt(np.pi) / 2.0
        return float(amp * scale * (erf((hi - self.d) / self.k) - erf((lo - self.d) / self.k)))


@dataclass(frozen=True)
class KernelSpec:
    """Nonlocal term ``lambda(t) * int J(zeta - x) u(zeta) dzeta``.

    ``j`` is a vectorised callable.  Tabulation on a grid of spacing ``h``
    samples ``J(k h)`` for ``k = -(n+1) .. n+1`` so every node difference
    ``zeta_j - x_i`` lands exactly on a sample.
    """

    j: Callable[[np.ndarray], np.ndarray]
    profile: object = field(default_factory=ConstantProfile)
    gaussian: Optional[GaussianParams] = None
    name: str = "custom"

    @classmethod
    def zero(cls) -> "KernelSpec":
        return cls(j=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
                   profile=ConstantProfile(0.0), name="zero")

    @classmethod
    def from_gaussian(cls, C: float, d: float, k: float, lam: float = 1.0,
                      profile=None) -> "KernelSpec":
        if k <= 0:
            raise ValueError(f"Gaussian width k must be positive, got {k}")
        params = GaussianParams(C, d, k, lam)
        return cls(j=params, profile=profile or ConstantProfile(1.0),
                   gaussian=params, name="gaussian")

    @classmethod
    def constant(cls, value: float = 1.0, profile=None) -> "KernelSpec":
        return cls(j=lambda z: np.full_like(np.asarray(z, dtype=float), value),
                   profile=profile or ConstantProfile(1.0), name="constant")

    @classmethod
    def from_table(cls, z, values, profile=None) -> "KernelSpec":
        """Piecewise-linear interpolant of samples, zero outside their range."""
        z = np.asarray(z, dtype=float)
        values = np.asarray(values, dtype=float)
        order = np.argsort(z)
        z, values = z[order], values[order]
        if not np.all(np.isfinite(values)):
            raise ValueError("kernel table contains non-finite values")

        def j(q):
            return np.interp(q, z, values, left=0.0, right=0.0)

        return cls(j=j, profile=profile or ConstantProfile(1.0), name="table")

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def lam(self, t):
        return self.profile(t)

    def table(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """Samples ``(z_k, J(z_k))`` with ``z_k = k h`` spanning ``[-length, length]``."""
        n = grid.n_interior
        k = np.arange(-(n + 1), n + 2)
        z = k * grid.h
        values = np.asarray(self.j(z), dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"kernel {self.name} is not finite on the grid table")
        return z, values

    def l2_norm_sq(self, lo: float = -1.0, hi: float = 1.0, n_quad: int = 4001) -> float:
        """Trapezoid approximation of ``int_lo^hi J(z)^2 dz``."""
        z = np.linspace(lo, hi, n_quad)
        return float(np.trapezoid(np.asarray(self.j(z)) ** 2, z))


def write_kernel_csv(path, kernel: KernelSpec, grid: Grid) -> None:
    z, values = kernel.table(grid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "J"])
        for zi, vi in zip(z, values):
            writer.writerow([repr(float(zi)), repr(float(vi))])


def read_kernel_csv(path, profile=None) -> KernelSpec:
    """Load a two-column ``z,J`` table (header required, ``#`` lines skipped)."""
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if [h.strip() for h in header] != ["z", "J"]:
            raise ValueError(f"kernel CSV header must be z,J; got {header}")
        for row in reader:
            rows.append((float(row[0]), float(row[1])))
    if len(rows) < 2:
        raise ValueError("kernel CSV needs at least two samples")
    z, values = zip(*rows)
    return KernelSpec.from_table(z, values, profile)
