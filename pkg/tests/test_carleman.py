import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlcontrol.carleman import (
    build_eta0,
    build_weights,
    carleman_functional,
    check_alpha_gap,
    check_h0,
    check_h2,
    default_s,
    probe_times,
)
from nlcontrol.model import ControlRegion, DecayProfile, Grid, KernelSpec, TimeGrid

GRID = Grid(49)
TG = TimeGrid(40)
OMEGA = ControlRegion(0.3, 0.7)


@pytest.fixture(scope="module")
def profile():
    return build_eta0(GRID, OMEGA)


def test_eta0_shape(profile):
    eta = profile.eta0
    assert eta[0] == 0.0 and eta[-1] == 0.0
    assert np.all(eta[1:-1] > 0) and eta.max() <= 1.0
    # a single critical point, inside omega
    crit = np.flatnonzero(np.diff(np.sign(profile.derivative(np.linspace(0, 1, 2000)))))
    assert len(crit) == 1
    assert OMEGA.contains(np.array([profile.center]))[0]
    assert profile.min_abs_derivative_outside() > 1e-3


def test_eta0_rejects_bad_region():
    with pytest.raises(ValueError):
        build_eta0(Grid(9, 2.0), OMEGA)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0])
def test_weight_extrema_and_gap(profile, kappa):
    w = build_weights(profile, kappa, 1.0, TG)
    assert w.sigma.min() == pytest.approx(w.sigma_minus, rel=1e-12)
    assert w.sigma.max() == pytest.approx(w.sigma_plus, rel=1e-12)
    assert np.all(w.alpha > 0)
    assert check_alpha_gap(w).passed
    np.testing.assert_allclose(w.alpha_at(profile.x, w.t[3]), w.alpha[3], rtol=1e-12)
    np.testing.assert_allclose(w.xi_at(profile.x, w.t[3]), w.xi[3], rtol=1e-12)


def test_weights_undefined_at_endpoints(profile):
    w = build_weights(profile, 1.0, 1.0, TG)
    with pytest.raises(ValueError):
        w.alpha_minus(0.0)
    with pytest.raises(ValueError):
        build_weights(profile, 0.0, 1.0, TG)


def test_probe_times_approach_endpoints():
    t = probe_times(TG)
    assert t.min() < TG.dt / 100 and t.max() > TG.T - TG.dt / 100
    assert np.all((t > 0) & (t < TG.T))


def test_h0_constant_kernel_with_decay_profile(profile):
    w = build_weights(profile, 1.0, 1.0, TG)
    rep = check_h0(KernelSpec.constant(1.0, DecayProfile(w.sigma_minus, TG.T)), w.sigma_minus, TG)
    assert rep.pass_h0 and rep.kbar == pytest.approx(2.0, rel=1e-2)


def test_h0_overflow_for_constant_lambda(profile):
    w = build_weights(profile, 0.5, 1.0, TG)
    rep = check_h0(KernelSpec.constant(1.0), w.sigma_minus, TG)
    assert not rep.pass_h0 and np.isinf(rep.kbar)
    assert rep.to_json()["kbar_infinite"] is True and rep.to_json()["kbar"] is None


def test_h0_zero_kernel_passes():
    assert check_h0(KernelSpec.zero(), 1.0, TG).kbar == 0.0


def test_h2_decides_on_threshold(profile):
    w = build_weights(profile, 1.0, 1.0, TG)
    strong = KernelSpec.from_gaussian(1.0, 0.0, 0.3, profile=DecayProfile(3 * w.sigma_minus, TG.T))
    assert check_h2(strong, w, 1e-2).pass_h2
    weak = KernelSpec.from_gaussian(1.0, 0.0, 0.3, profile=DecayProfile(0.5 * w.sigma_minus, TG.T))
    assert not check_h2(weak, w, 1e-2).pass_h2


def test_default_s():
    assert default_s(1.0, 1.0, 8.0) == pytest.approx(1 + 1 + 4)
    with pytest.raises(ValueError):
        default_s(1.0, 1.0, np.inf)


@settings(max_examples=20, deadline=None)
@given(gamma=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_functional_is_homogeneous_of_degree_two(profile, gamma, seed):
    w = build_weights(profile, 1.0, 1.0, TG)
    z = np.random.default_rng(seed).standard_normal((TG.n_steps + 1, GRID.n_interior))
    base = carleman_functional(z, w)
    assert base > 0
    assert carleman_functional(gamma * z, w) == pytest.approx(gamma ** 2 * base, rel=1e-10)
    assert carleman_functional(np.zeros_like(z), w) == 0.0
