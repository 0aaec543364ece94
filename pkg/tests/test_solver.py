import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlcontrol.model import (
    ControlRegion,
    FrozenCoefficients,
    Grid,
    KernelSpec,
    SystemCoefficients,
    TimeGrid,
    linear_coupling,
    tanh_coupling,
    zero_coupling,
)
from nlcontrol.solver import (
    ControlSignal,
    LinearSystem,
    SolverError,
    cn_amplification,
    duality_gap,
    solve_semilinear_forward,
)
from nlcontrol.verification import heat_mode_error, manufactured_error

OMEGA = ControlRegion(0.2, 0.8)
KERNELS = (KernelSpec.from_gaussian(1.0, 0.0, 0.3), KernelSpec.from_gaussian(0.5, 0.1, 0.3))


def make_system(n=20, N=30, frozen=None, kernels=KERNELS, coeffs=None):
    coeffs = coeffs or SystemCoefficients(a1=0.3, a2=0.2, b1=0.1, c1=0.2, c2=-0.1)
    return LinearSystem(coeffs, kernels, Grid(n), TimeGrid(N), frozen)


def test_zero_data_gives_zero_state():
    s = make_system()
    traj = s.forward(None, np.zeros(20), np.zeros(20))
    assert np.all(traj.y == 0) and np.all(traj.z == 0)


def test_control_outside_omega_is_ignored():
    s = make_system()
    mask = OMEGA.indicator(s.grid)
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((30, 20))
    a = s.forward(ControlSignal(raw, mask), np.zeros(20), np.zeros(20))
    b = s.forward(ControlSignal(raw * mask, mask), np.zeros(20), np.zeros(20))
    np.testing.assert_array_equal(a.y, b.y)


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(-5, 5), beta=st.floats(-5, 5), seed=st.integers(0, 2 ** 16))
def test_linearity(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    s = make_system(12, 10, FrozenCoefficients(*(rng.standard_normal((10, 12)) for _ in range(4))))
    mask = OMEGA.indicator(s.grid)

    def sample():
        return (rng.standard_normal(12), rng.standard_normal(12),
                ControlSignal(rng.standard_normal((10, 12)), mask))

    u, v = sample(), sample()
    combo = (alpha * u[0] + beta * v[0], alpha * u[1] + beta * v[1],
             ControlSignal(alpha * u[2].y + beta * v[2].y, mask))
    lhs = s.forward(combo[2], combo[0], combo[1])
    tu, tv = s.forward(u[2], u[0], u[1]), s.forward(v[2], v[0], v[1])
    ref = alpha * tu.y + beta * tv.y
    scale = max(np.max(np.abs(ref)), np.max(np.abs(alpha * tu.y)), np.max(np.abs(beta * tv.y)), 1e-300)
    assert np.max(np.abs(lhs.y - ref)) <= 1e-12 * scale


@pytest.mark.parametrize("two", [False, True])
def test_duality_with_time_varying_coefficients(two):
    rng = np.random.default_rng(7)
    s = make_system(15, 20, FrozenCoefficients(*(rng.standard_normal((20, 15)) for _ in range(4))))
    mask = OMEGA.indicator(s.grid)
    nu = ControlSignal(rng.standard_normal((20, 15)), mask,
                       rng.standard_normal((20, 15)) if two else None)
    lhs, rhs = duality_gap(s, nu, *(rng.standard_normal(15) for _ in range(4)))
    assert lhs == pytest.approx(rhs, rel=1e-11)


def test_heat_mode_accuracy_and_order():
    errs = [heat_mode_error(n, 2 * n).abs_error for n in (19, 39, 79)]
    assert heat_mode_error(80, 160).rel_error <= 5e-3
    assert np.log2(errs[0] / errs[1]) > 1.9 and np.log2(errs[1] / errs[2]) > 1.9


def test_manufactured_solution_order():
    coeffs = SystemCoefficients(a1=0.5, a2=0.3, b1=0.2, b2=-0.1, c1=0.1, c2=0.2)
    errs = [manufactured_error(n, n + 1, coeffs, KERNELS, (0.1, 0.2, 0.3, -0.1)).abs_error
            for n in (19, 39, 79)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() >= 1.8


def test_singular_step_matrix_raises_with_step_index():
    # h = 1/2, A = -8 + c1 = 2 and dt/2 * A = 1 makes I - dt/2 A singular
    s = LinearSystem(SystemCoefficients(a1=1.0, a2=1.0, c1=10.0), (KernelSpec.zero(),) * 2,
                     Grid(1), TimeGrid(1))
    with pytest.raises(SolverError) as info:
        s.forward(None, np.ones(1), np.ones(1))
    assert info.value.step == 0


def test_energy_bound_holds():
    s = make_system(20, 40, FrozenCoefficients.constant((40, 20), 0.1, 0.2, 0.3, 0.1))
    C = s.growth_rate_bound(bound_m=0.0) + 2 * 0.3
    assert s.measured_growth_rate() <= C
    x = s.grid.x
    traj = s.forward(None, np.sin(np.pi * x), np.sin(2 * np.pi * x))
    norms = traj.norms()
    bound = norms[0] * cn_amplification(C, s.time_grid.dt) ** np.arange(41)
    assert np.all(norms <= bound * (1 + 1e-12))


def test_semilinear_with_zero_coupling_matches_linear():
    s = make_system()
    x = s.grid.x
    lin = s.forward(None, np.sin(np.pi * x), 0.5 * x * (1 - x))
    semi = solve_semilinear_forward(s, zero_coupling(), None, np.sin(np.pi * x), 0.5 * x * (1 - x))
    np.testing.assert_allclose(semi.y, lin.y, atol=1e-13)
    np.testing.assert_allclose(semi.z, lin.z, atol=1e-13)


def test_semilinear_with_linear_coupling_matches_frozen_constants():
    q = (0.3, -0.2, 0.4, 0.1)
    s = make_system()
    x = s.grid.x
    y0, z0 = np.sin(np.pi * x), np.cos(np.pi * x) * x * (1 - x)
    semi = solve_semilinear_forward(s, linear_coupling(*q), None, y0, z0)
    frozen = s.with_frozen(FrozenCoefficients.constant((30, 20), *q)).forward(None, y0, z0)
    np.testing.assert_allclose(semi.y, frozen.y, atol=1e-10)
    np.testing.assert_allclose(semi.z, frozen.z, atol=1e-10)


def test_semilinear_scheme_is_midpoint_consistent():
    s = make_system(20, 30)
    coupling = tanh_coupling(0.5, 0.2, 0.3, 0.1)
    x = s.grid.x
    traj = solve_semilinear_forward(s, coupling, None, np.sin(np.pi * x), np.sin(np.pi * x))
    # the frozen linear system at the converged midpoints reproduces the trajectory
    from nlcontrol.model import freeze_coefficients
    ym, zm = traj.midpoints()
    relin = s.with_frozen(freeze_coefficients(coupling, ym, zm)).forward(None, traj.y[0], traj.z[0])
    np.testing.assert_allclose(relin.y, traj.y, atol=1e-11)


def test_with_frozen_is_independent():
    s = make_system()
    other = s.with_frozen(FrozenCoefficients.constant((30, 20), c=1.0))
    assert other is not s
    assert np.all(s.frozen.c == 0)
