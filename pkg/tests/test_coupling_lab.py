import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import skew
from driftlab.coupling_lab import (DomainCollapse, InvarianceViolation, coupling_step,
                                   holonomy_map, holonomy_regularity_check, holonomy_sweep,
                                   iterate_coupling, matched_couple, recovery_steps,
                                   standard_pushforward, _shifted)
from driftlab.ensemble import default_constants, flat_pair, pair_from_functions, pair_quantile
from driftlab.statistics import wasserstein_vertical
from driftlab.system_model import preset


@pytest.fixture(scope="module")
def one_sink_c(one_sink):
    return default_constants(one_sink)


@pytest.fixture(scope="module")
def nonex_pair(nonex):
    return flat_pair(nonex, 0.3, 0.2, constants=default_constants(nonex, c2=1.0))


def sloped(sys, c, a=0.7, g=2.0):
    return pair_from_functions(a, a + c.delta, lambda x: 0.2 + 0.3 * sys.epsilon * c.c1 * (x - a),
                               lambda x: np.exp(g * (x - a)), sys.epsilon, c)


# ---------------------------------------------------------------------------
# pushforward
# ---------------------------------------------------------------------------

def test_flat_pair_splits_in_two(one_sink, one_sink_c):
    d = standard_pushforward(one_sink, flat_pair(one_sink, 0.3, 0.5))
    assert len(d.children) == 2
    np.testing.assert_allclose(d.weights, [0.5, 0.5], atol=1e-12)
    for ch in d.children:
        assert ch.length == pytest.approx(one_sink_c.delta, rel=1e-9)


def test_inverse_branches_invert(one_sink, one_sink_c):
    p = sloped(one_sink, one_sink_c)
    d = standard_pushforward(one_sink, p)
    for j, ch in enumerate(d.children):
        y = np.linspace(ch.a, ch.b, 17)
        x = d.phi(j, y)
        assert np.all((x >= p.a - 1e-14) & (x <= p.b + 1e-14))
        fx = one_sink.f(x, p.curve(x))
        np.testing.assert_allclose((fx - y + 0.5) % 1.0 - 0.5, 0, atol=1e-12)


_S = preset("one_sink", 1e-3)
_C = default_constants(_S)


@given(st.floats(0.0, 0.99), st.floats(0.0, 1.0), st.floats(-1, 1), st.floats(-4, 4))
@settings(max_examples=40, deadline=None)
def test_weights_sum_to_one(a, theta0, tilt, g):
    s, c = _S, _C
    p = pair_from_functions(a, a + c.delta,
                            lambda x: theta0 + tilt * s.epsilon * c.c1 * (x - a),
                            lambda x: np.exp(g * (x - a)), s.epsilon, c)
    d = standard_pushforward(s, p)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert all(0 <= ch.a < 1 for ch in d.children)


@pytest.mark.parametrize("which", ["flat", "sloped"])
def test_pushforward_matches_direct_push(one_sink, one_sink_c, which):
    p = flat_pair(one_sink, 0.3, 0.5) if which == "flat" else sloped(one_sink, one_sink_c)
    d = standard_pushforward(one_sink, p)
    n = 10 ** 5
    x = pair_quantile(p, (np.arange(n) + 0.5) / n)
    xo, to = one_sink.step_arrays(x, p.curve(x))
    m = d.sample(n, 0, stratified=True)
    assert wasserstein_vertical(xo, to, np.ones(n), m.x, m.theta, m.weight) < 2e-3


def test_invariance_violation_reported(one_sink):
    tight = default_constants(one_sink)
    p = pair_from_functions(0.2, 0.2 + tight.delta, lambda x: 0.5 + 0 * x,
                            lambda x: np.exp(1.5 * tight.c2 * (x - 0.2)), one_sink.epsilon, tight,
                            validate=False)
    with pytest.raises(InvarianceViolation, match="invariance violated"):
        standard_pushforward(one_sink, p)


@pytest.mark.parametrize("gamma", [2, 4, 8, 16, 32])
def test_recovery_time_matches_halving(gamma):
    # doubling halves rho'/rho and quarters rho''/rho at every step, so an
    # exponential density with rate gamma c2 recovers after
    # ceil(log2(gamma sqrt(c2 / D0bar))) steps
    s = skew(eps=1e-3)
    c = default_constants(s)
    p = pair_from_functions(0.1, 0.1 + c.delta, lambda x: 0.5 + 0 * x,
                            lambda x: np.exp(gamma * c.c2 * (x - 0.1)), s.epsilon, c,
                            validate=False)
    assert recovery_steps(s, p) == math.ceil(math.log2(gamma * math.sqrt(c.c2 / c.D0bar)))


# ---------------------------------------------------------------------------
# holonomy
# ---------------------------------------------------------------------------

def test_zero_distance_is_identity(nonex, nonex_pair):
    t = holonomy_map(nonex, nonex_pair, nonex_pair, 200)
    np.testing.assert_allclose(t.H, t.x, atol=1e-15)
    np.testing.assert_allclose(t.dH, 1.0, atol=1e-12)


def test_vertical_leaves_give_identity():
    s = skew(hat_cos=(), eps=1e-3)
    p = flat_pair(s, 0.3, 0.2, constants=default_constants(s, c2=1.0))
    t = holonomy_map(s, p, _shifted(p, 2e-3), 1000)
    np.testing.assert_allclose(t.H, t.x, atol=1e-15)
    np.testing.assert_allclose(t.dH, 1.0, atol=1e-12)


def test_holonomy_identity_and_distance(nonex, nonex_pair):
    t = holonomy_map(nonex, nonex_pair, _shifted(nonex_pair, 1e-3), 1000)
    r = holonomy_regularity_check(t)
    assert r["identity_error_max"] <= 1e-9
    assert r["orientation_preserving"]
    assert math.exp(-0.1) <= r["distance_ratio_min"] <= r["distance_ratio_max"] <= math.exp(0.1)
    assert r["distance_ratio_max"] <= r["distance_ratio_bound"]


def test_inverse_table(nonex, nonex_pair):
    t = holonomy_map(nonex, nonex_pair, _shifted(nonex_pair, 1e-3), 100)
    y = np.linspace(t.lo + 1e-5, t.hi - 1e-5, 9)
    np.testing.assert_allclose(t(t.inverse(y)), y, atol=1e-14)


def test_holonomy_linear_in_delta(nonex, nonex_pair):
    r = holonomy_sweep(nonex, nonex_pair, [0.25, 0.5, 1.0, 2.0], 1000)
    assert r["r2"] >= 0.95
    assert r["D"] > 0


def test_domain_collapse(nonex):
    p = flat_pair(nonex, 0.3, 0.2, constants=default_constants(nonex, c2=1.0))
    with pytest.raises(DomainCollapse):
        holonomy_map(nonex, p, _shifted(p, 0.5), 10)


def test_horizon_limit(nonex, nonex_pair):
    with pytest.raises(ValueError):
        holonomy_map(nonex, nonex_pair, nonex_pair, 10 ** 5)


# ---------------------------------------------------------------------------
# coupling step
# ---------------------------------------------------------------------------

def test_vertical_leaves_coupled_mass():
    s = skew(hat_cos=(), eps=1e-3)
    p = flat_pair(s, 0.3, 0.2, constants=default_constants(s, c2=1.0))
    r = coupling_step(s, matched_couple(p, 1.0), 1000, samples=16)
    assert r.D_holonomy == 0.0
    assert r.m_C == pytest.approx((1 - r.c_star * 1e-3) * math.exp(-4 * r.D_used))


@pytest.fixture(scope="module")
def one_sink_run(one_sink):
    p = flat_pair(one_sink, 0.3, 0.5, constants=default_constants(one_sink, c2=1.0))
    return iterate_coupling(one_sink, matched_couple(p, 1.0), 4000, steps=5, samples=32)


def test_coupling_mass_bookkeeping(one_sink_run):
    r = one_sink_run.first
    np.testing.assert_allclose(r.masses, [1.0, 1.0], atol=1e-9)
    assert all(u["mass"] >= -1e-12 for u in r.uncoupled)
    assert r.m_C == pytest.approx((1 - r.c_star * r.Delta * 1e-3) * math.exp(-4 * r.D_used * r.Delta))
    assert r.D_used >= r.D_holonomy
    assert r.xi_ratio <= 1 + 1e-12


def test_wasserstein_bound_structure(one_sink_run):
    r = one_sink_run.first
    assert r.wasserstein_bound == pytest.approx(r.m_C * r.distance.mean() + 1 - r.m_C)
    np.testing.assert_allclose(r.distance / r.predictor, 1.0, rtol=0.1)


def test_coupled_points_contract(one_sink_run):
    factors = [s["factor"] for s in one_sink_run.steps]
    assert all(f < math.exp(-1) for f in factors)
    assert one_sink_run.steps[-1]["median_distance"] < 1e-3 * math.exp(-5)
