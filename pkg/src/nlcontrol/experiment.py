"""Turn a validated :class:`ExperimentConfig` into model objects.

Every module-level precondition is checked here, before any solve runs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .carleman import build_eta0, build_weights, CarlemanWeights, WeightProfile
from .config import ConfigError, ExperimentConfig, KernelConfig, build_initial_data
from .fixedpoint import FixedPointConfig, SemilinearProblem
from .model import (
    ControlRegion,
    CouplingSpec,
    Grid,
    KernelSpec,
    SystemCoefficients,
    TimeGrid,
    make_coupling,
    make_profile,
    read_kernel_csv,
)


@dataclass
class Experiment:
    config: ExperimentConfig
    grid: Grid
    time_grid: TimeGrid
    coeffs: SystemCoefficients
    region: ControlRegion
    kernels: tuple
    coupling: CouplingSpec
    y0: np.ndarray
    z0: np.ndarray
    profile: WeightProfile
    sigma_minus: float

    def problem(self) -> SemilinearProblem:
        return SemilinearProblem(self.coeffs, self.kernels, self.grid, self.time_grid,
                                 self.region, self.coupling, self.y0, self.z0,
                                 self.config.control.two_controls, self.config.control.c_margin)

    def fixed_point_config(self) -> FixedPointConfig:
        fp = self.config.fixed_point
        return FixedPointConfig(
            delta_smallness=fp.delta, max_outer_iterations=fp.max_outer_iterations,
            outer_tolerance=fp.outer_tolerance, epsilon=fp.epsilon,
            epsilon_schedule=fp.epsilon_schedule, start_from_zero=fp.start_from_zero,
            allow_large_data=fp.allow_large_data, divergence_window=fp.divergence_window,
            ball_factor=fp.ball_factor, validation_factor=fp.validation_factor,
            cg_tol=self.config.hum.tol, cg_max_iter=self.config.hum.max_iter)

    def weights(self, s: float) -> CarlemanWeights:
        return build_weights(self.profile, self.config.carleman.kappa, s, self.time_grid)


def _kernel(spec: KernelConfig, T: float, sigma_minus: float, where: str) -> KernelSpec:
    profile = make_profile(spec.profile.as_dict(), T, sigma_minus)
    if spec.kind == "zero":
        return KernelSpec.zero()
    if spec.kind == "gaussian":
        return KernelSpec.from_gaussian(spec.C, spec.d, spec.k, spec.lam, profile)
    if spec.kind == "constant":
        return KernelSpec.constant(spec.value, profile)
    try:
        return read_kernel_csv(spec.path, profile)
    except (OSError, ValueError) as exc:
        raise ConfigError([(where + ".path", None, str(exc))]) from None


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Build and cross-check all objects; raises :class:`ConfigError` on any violation."""
    try:
        grid = Grid(cfg.grid.n_interior)
        tg = TimeGrid(cfg.grid.n_steps, cfg.grid.T)
        coeffs = SystemCoefficients(**cfg.coefficients.model_dump())
        region = ControlRegion(*cfg.control.omega)
        region.require_inside(0.0, 1.0)
        if not region.indicator(grid).any():
            raise ValueError("control region contains no interior grid node")
        profile = build_eta0(grid, region, cfg.carleman.eta_margin)
        kappa = cfg.carleman.kappa
        sigma_minus = float(np.exp(4 * kappa) - np.exp(3 * kappa))
        kernels = (_kernel(cfg.kernels.y, tg.T, sigma_minus, "kernels.y"),
                   _kernel(cfg.kernels.z, tg.T, sigma_minus, "kernels.z"))
        coupling = make_coupling(cfg.coupling.name, **cfg.coupling.params)
        y0, z0 = build_initial_data(cfg, grid)
        b = cfg.boundary
        ControlRegion(*b.omega_bar).require_inside(1.0, 1.0 + b.eps_ext)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError([("", None, str(exc))]) from None
    return Experiment(cfg, grid, tg, coeffs, region, kernels, coupling, y0, z0, profile,
                      sigma_minus)
