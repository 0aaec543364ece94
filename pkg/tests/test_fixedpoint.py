import json

import numpy as np
import pytest

from nlcontrol.fixedpoint import (
    DataTooLargeError,
    FixedPointConfig,
    FixedPointDivergence,
    SemilinearProblem,
    apply_phi,
    solve_semilinear_null_control,
    verify_candidate,
)
from nlcontrol.hum import minimize_j
from nlcontrol.model import (
    ControlRegion,
    Grid,
    KernelSpec,
    SystemCoefficients,
    TimeGrid,
    tanh_coupling,
    zero_coupling,
)
from nlcontrol.solver import StateTrajectory

N_X, N_T = 20, 30


def make_problem(coupling=None, norm=1e-2, two=False):
    grid, tg = Grid(N_X), TimeGrid(N_T)
    y0, z0 = np.sin(np.pi * grid.x), 0.5 * np.sin(2 * np.pi * grid.x)
    scale = norm / (grid.l2_norm(y0) + grid.l2_norm(z0)) if norm else 0.0
    return SemilinearProblem(
        SystemCoefficients(a1=0.1, a2=0.1, b1=0.1, c1=0.1),
        (KernelSpec.from_gaussian(1.0, 0.0, 0.3), KernelSpec.from_gaussian(0.5, 0.1, 0.3)),
        grid, tg, ControlRegion(0.2, 0.8),
        coupling or tanh_coupling(0.1, 0.05, 1.0, 0.05), scale * y0, scale * z0, two)


CONFIG = FixedPointConfig(delta_smallness=2e-2)


def test_zero_data_is_a_fixed_point():
    res = solve_semilinear_null_control(make_problem(norm=0.0), CONFIG)
    assert res.iterations == 1 and res.converged
    assert np.all(res.nu.as_array() == 0)
    assert np.all(res.trajectory.y == 0) and np.all(res.trajectory.z == 0)


def test_tanh_benchmark_converges_and_validates(tmp_path):
    log_path = tmp_path / "log.jsonl"
    res = solve_semilinear_null_control(make_problem(), CONFIG, log_path)
    assert res.converged and res.validation_passed
    d = np.array(res.distances)
    assert np.all(np.diff(d[1:]) < 0)
    lines = [json.loads(x) for x in log_path.read_text().splitlines()]
    assert [rec["iterate"] for rec in lines] == list(range(1, res.iterations + 1))
    # one control constant for the run
    assert max(res.control_norms) <= res.control_constant * make_problem().data_norm * (1 + 1e-12)


def test_zero_coupling_gives_linear_hum_control():
    prob = make_problem(zero_coupling(), two=True)
    res = solve_semilinear_null_control(prob, CONFIG)
    hum = minimize_j(prob.penalized(prob.linear_system(), CONFIG.epsilon))
    assert res.iterations <= 2
    np.testing.assert_allclose(res.nu.as_array(), hum.nu.as_array(), rtol=0, atol=1e-10 *
                               np.abs(hum.nu.as_array()).max())
    report = verify_candidate(prob, res.nu)
    assert report.terminal_norms == pytest.approx(hum.terminal_norms, rel=1e-8)


def test_phi_is_constant_without_coupling():
    prob = make_problem(zero_coupling(), two=True)
    rng = np.random.default_rng(3)
    shape = (N_T + 1, N_X)
    a = apply_phi(prob, prob.zero_state(), 1e-4)[1].as_array()
    other = StateTrajectory(rng.standard_normal(shape), rng.standard_normal(shape),
                            prob.grid, prob.time_grid)
    b = apply_phi(prob, other, 1e-4)[1].as_array()
    np.testing.assert_allclose(a, b, atol=1e-12 * np.abs(a).max())


def test_control_constant_is_uniform_over_the_ball():
    prob = make_problem()
    rng = np.random.default_rng(5)
    shape = (N_T + 1, N_X)
    cs = []
    for _ in range(5):
        traj = StateTrajectory(1e-2 * rng.standard_normal(shape), 1e-2 * rng.standard_normal(shape),
                               prob.grid, prob.time_grid)
        cs.append(apply_phi(prob, traj, 1e-4)[2].empirical_c)
    assert max(cs) / min(cs) <= 1.05


def test_data_gate():
    prob = make_problem(norm=0.5)
    with pytest.raises(DataTooLargeError):
        solve_semilinear_null_control(prob, CONFIG)
    with pytest.warns(UserWarning, match="overridden"):
        solve_semilinear_null_control(
            prob, FixedPointConfig(delta_smallness=2e-2, allow_large_data=True,
                                   max_outer_iterations=2))


def test_leaving_the_ball_is_reported_with_history():
    with pytest.raises(FixedPointDivergence) as info:
        solve_semilinear_null_control(make_problem(), FixedPointConfig(delta_smallness=2e-2,
                                                                       ball_factor=1e-3))
    assert info.value.partial.radius_history


def test_epsilon_schedule():
    cfg = FixedPointConfig(epsilon_schedule=[1e-2, 1e-4])
    assert [cfg.epsilon_at(k) for k in (1, 2, 3)] == [1e-2, 1e-4, 1e-4]
    with pytest.raises(ValueError):
        FixedPointConfig(epsilon_schedule=[1e-4, 1e-2])
