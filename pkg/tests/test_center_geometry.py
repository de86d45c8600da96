import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftlab.averaged_dynamics import classify_zeros
from driftlab.center_geometry import (center_expansion_step, cone_constants, distortion_profile,
                                      growth_bound, psi_bar, slope_field, zeta_trace)
from driftlab.ensemble import evolve, uniform_ensemble
from driftlab.fast_layer import averaged_drift
from driftlab.system_model import TorusPoint, jacobian, preset

from conftest import skew


@pytest.fixture(scope="module")
def cones_nonex(nonex):
    return cone_constants(nonex)


def test_skew_cones_are_degenerate(two_sink):
    c = cone_constants(two_sink)
    assert c.Kc == 0.0 and c.n_bar == 1


@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True),
       st.integers(1, 200))
@settings(max_examples=50, deadline=None)
def test_skew_slopes_vanish(x, t, n):
    assert slope_field(skew(), TorusPoint(x, t), n) == 0.0


def test_nonexample_contraction_rate(nonex, cones_nonex):
    # the slope map contracts at rate 1 / min f_x up to O(eps)
    fx_min = nonex.params.ell - 2 * math.pi * (nonex.params.alpha + nonex.params.ell * nonex.params.beta)
    assert cones_nonex.sigma_c == pytest.approx(1 / fx_min, abs=2e-3)
    assert cones_nonex.sigma_c < 1


def test_contraction_rate_by_random_differencing(nonex, cones_nonex):
    rng = np.random.default_rng(0)
    e = nonex.epsilon
    worst = 0.0
    for x, t, s in zip(rng.random(4000), rng.random(4000),
                       rng.uniform(-cones_nonex.Kc, cones_nonex.Kc, 4000)):
        fx, ft = nonex.df_dx(x, t), nonex.df_dtheta(x, t)
        wx, wt = nonex.domega_dx(x, t), nonex.domega_dtheta(x, t)

        def xi(u):
            return ((1 + e * wt) * u - ft) / (fx - e * wx * u)

        h = 1e-6
        worst = max(worst, abs(xi(s + h) - xi(s - h)) / (2 * h))
    assert worst <= cones_nonex.sigma_c * (1 + 1e-6)
    assert worst > 0.95 * cones_nonex.sigma_c


def test_regularization_depth_formula(cones_nonex):
    c = cones_nonex
    expected = math.ceil(math.log(c.rho_reg / (2 * c.Kc)) / math.log(c.sigma_c))
    assert c.n_bar == expected
    assert c.sigma_c ** c.n_bar * 2 * c.Kc < c.rho_reg


def test_rho_reg_range(nonex):
    with pytest.raises(ValueError):
        cone_constants(nonex, rho_reg=0.2)


def test_seed_independence(nonex, cones_nonex):
    rng = np.random.default_rng(1)
    for x, t in rng.random((20, 2)):
        p = TorusPoint(x, t)
        a = slope_field(nonex, p, 30, seed=0.0, Kc=cones_nonex.Kc)
        b = slope_field(nonex, p, 30, seed=cones_nonex.Kc, Kc=cones_nonex.Kc)
        assert abs(a - b) <= cones_nonex.Kc * cones_nonex.sigma_c ** 30 + 1e-16


def test_single_step_slope_at_tiny_epsilon():
    s = preset("nonexample", 1e-14)
    for x, t in np.random.default_rng(2).random((20, 2)):
        expected = -s.df_dtheta(x, t) / s.df_dx(x, t)
        assert slope_field(s, TorusPoint(x, t), 1) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_expansion_step_at_sink(two_sink):
    xs = (np.arange(256) + 0.5) / 256
    vals = [center_expansion_step(two_sink, TorusPoint(x, 0.25), 0.0) for x in xs]
    assert np.mean(vals) == pytest.approx(1 - 0.04 * math.pi, abs=1e-12)


def test_expansion_step_tiny_epsilon(nonex):
    s = nonex.with_epsilon(1e-300)
    assert center_expansion_step(s, TorusPoint(0.3, 0.4), 0.5) == 1.0


def test_factor_product_matches_jacobian_product(nonex, cones_nonex):
    n = 10
    for x, t in np.random.default_rng(3).random((10, 2)):
        tr = zeta_trace(nonex, TorusPoint(x, t), n, cones_nonex)
        v = np.array([tr.slope[0], 1.0])
        for k in range(n):
            v = jacobian(nonex, TorusPoint(tr.x[k], tr.theta[k])) @ v
        prod = float(np.prod(tr.mu_factor[:-1]))
        assert v[1] == pytest.approx(prod, rel=1e-9)
        assert abs(v[0]) < 1e-9 * abs(v[1])
        assert tr.log_mu(0) == pytest.approx(math.log(prod), abs=1e-12)


@pytest.mark.parametrize("theta", [0.1, 0.25, 0.4])
def test_skew_psi_bar_is_drift_derivative(two_sink, theta):
    assert psi_bar(two_sink, theta) == pytest.approx(4 * math.pi * math.cos(4 * math.pi * theta),
                                                     abs=1e-10)


def test_nonexample_rate_and_drift_slope(nonex, cones_nonex):
    a, b, ell = nonex.params.alpha, nonex.params.beta, nonex.params.ell
    assert psi_bar(nonex, 0.0, cones=cones_nonex) == pytest.approx(2 * math.pi ** 2 * a / ell, rel=0.05)
    h = 1e-3
    d = (averaged_drift(nonex, h) - averaged_drift(nonex, -h)) / (2 * h)
    assert d == pytest.approx(-2 * math.pi ** 2 * b, rel=0.05)


def test_zeta_starts_at_zero_and_is_additive(nonex, cones_nonex):
    p = TorusPoint(0.123, 0.456)
    full = zeta_trace(nonex, p, 100, cones_nonex)
    assert full.zeta[0] == 0.0
    tail = zeta_trace(nonex, TorusPoint(full.x[50], full.theta[50]), 50, cones_nonex)
    assert full.zeta[100] == pytest.approx(full.zeta[50] + tail.zeta[50], abs=1e-12)


def test_slopes_stay_in_cone(nonex, cones_nonex):
    tr = zeta_trace(nonex, TorusPoint(0.7, 0.1), 500, cones_nonex)
    assert np.max(np.abs(tr.slope)) <= cones_nonex.Kc


def test_growth_bound_slack(nonex, cones_nonex):
    tr = zeta_trace(nonex, TorusPoint(0.2, 0.9), 400, cones_nonex)
    for n in (1, 50, 200, 400):
        assert growth_bound(tr, cones_nonex, 400, n) >= -1e-12


def test_horizon_cap(nonex, cones_nonex):
    with pytest.raises(ValueError):
        zeta_trace(nonex, TorusPoint(0, 0), 10 ** 6 + 1, cones_nonex)


def test_distortion_within_regularization_error(nonex, cones_nonex):
    N = 200
    prof = distortion_profile(nonex, TorusPoint(0.3, 0.2), N, [0.0, 1e-3], cones_nonex)
    # at zero offset the gap is the regularization error of zeta
    bound = 2 * N * nonex.epsilon * cones_nonex.rho_reg + 2 * cones_nonex.n_bar * cones_nonex.Gamma * nonex.epsilon
    assert abs(prof[0, 1]) <= bound
    assert abs(prof[1, 1] - prof[0, 1]) < 1e-2


def test_one_sink_contraction_in_H(one_sink, one_sink_field):
    cls = classify_zeros(one_sink_field)
    n = int(4 / one_sink.epsilon)
    ens = uniform_ensemble(2000, 11, cls.H(0))
    _, tr = evolve(one_sink, ens, n)
    assert np.median(tr.zeta[-1] - tr.zeta[0]) <= -9 * 4 / 16
