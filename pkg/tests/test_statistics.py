import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from driftlab.averaged_dynamics import classify_zeros, field_from_functions
from driftlab.ensemble import uniform_ensemble
from driftlab.statistics import (Observable, circle_w1, correlation_decay, fit_exponent,
                                 lclt_check, lclt_variance, metastability_report, sink_run,
                                 srb_histogram, wasserstein_vertical)
from driftlab.system_model import preset

from conftest import skew


@pytest.fixture(scope="module")
def ou_field():
    return field_from_functions(lambda t: np.sin(2 * np.pi * t) / (2 * np.pi),
                                lambda t: np.cos(2 * np.pi * t), lambda t: 0.9 + 0 * t, 4096)


@pytest.mark.parametrize("t", [0.25, 1.0, 3.0])
def test_lclt_variance_closed_form(ou_field, t):
    assert lclt_variance(ou_field, 0.5, t) == pytest.approx(0.9 * (1 - math.exp(-2 * t)) / 2,
                                                            abs=1e-6)


def test_lclt_self_test(ou_field):
    eps, t = 1e-3, 1.0
    s2 = lclt_variance(ou_field, 0.5, t)
    dev = np.random.default_rng(0).normal(0, math.sqrt(eps * s2), 10 ** 5)
    r = lclt_check(dev, ou_field, 0.5, t, eps)
    assert abs(r.variance_ratio - 1) < 0.02 and r.ks <= 0.005


def test_lclt_time_range(ou_field):
    with pytest.raises(ValueError):
        lclt_check(np.zeros(10), ou_field, 0.5, 5.0, 1e-3)
    with pytest.raises(ValueError, match="floor"):
        lclt_check(np.zeros(10), ou_field, 0.5, 0.25, 1e-300)


def test_observable_means():
    A = Observable.from_coefficients(theta_cos=(0.5, 1.0), x_sin=(0.0, 2.0), x_cos=(0.25,))
    g = (np.arange(256) + 0.5) / 256
    X, T = np.meshgrid(g, g)
    assert A(X, T).mean() == pytest.approx(A.lebesgue_mean, abs=1e-12)
    assert A.sup_norm >= np.abs(A(X, T)).max()


def test_constant_observables_do_not_correlate():
    one = Observable.from_coefficients(theta_cos=(1.0,))
    d = correlation_decay(preset("one_sink", 4e-3), one, one, 200, 2000, seed=0)
    assert np.max(np.abs(d.corr)) < 1e-12
    assert d.status == "no-decay-detected"


def test_decay_rate_scales_with_epsilon():
    A = Observable.from_coefficients(theta_cos=(1.0, 1.0))
    B = Observable.from_coefficients(theta_cos=(0.0, -1.0))
    e = 4e-3
    d = correlation_decay(preset("one_sink", e), A, B, 2000, 20000, seed=1,
                          window=(125, 1000))
    assert d.status == "ok" and 0.3 < d.rate / e < 3.0
    # the separated bumps stay anticorrelated over the fit window
    assert np.all(d.corr[125:1000] < 0)


def test_fit_exponent_recovers_power():
    eps = np.array([4e-3, 2e-3, 1e-3])
    k, r2 = fit_exponent(eps, 0.8 * eps ** 1.1)
    assert k == pytest.approx(1.1, abs=1e-12) and r2 == pytest.approx(1.0)


def test_nonergodic_traps_hold():
    s = preset("two_sink_nonergodic", 0.02)
    cls = classify_zeros(field_from_functions(lambda t: np.sin(4 * np.pi * t),
                                              lambda t: 4 * np.pi * np.cos(4 * np.pi * t),
                                              lambda t: 0.5 + 0 * t))
    for k, z in enumerate(cls.sinks):
        r = sink_run(s, cls, np.random.default_rng(k).random(500), np.full(500, z), k, 2000)
        assert r["transitions"] == 0
        assert r["masses"][k] == 1.0


@pytest.mark.slow
def test_nonergodic_traps_hold_long_runs():
    s = preset("two_sink_nonergodic", 0.02)
    cls = classify_zeros(field_from_functions(lambda t: np.sin(4 * np.pi * t),
                                              lambda t: 4 * np.pi * np.cos(4 * np.pi * t),
                                              lambda t: 0.5 + 0 * t))
    for k, z in enumerate(cls.sinks):
        rng = np.random.default_rng(10 + k)
        wide = sink_run(s, cls, rng.random(10 ** 4), np.full(10 ** 4, z), k, 1000)
        long = sink_run(s, cls, rng.random(1), np.full(1, z), k, 10 ** 7)
        for r in (wide, long):
            assert r["transitions"] == 0
            assert np.all(r["last"] == k)


def test_ergodic_transitions_observed():
    s = preset("two_sink_ergodic", 0.05)
    cls = classify_zeros(field_from_functions(lambda t: np.sin(4 * np.pi * t),
                                              lambda t: 4 * np.pi * np.cos(4 * np.pi * t),
                                              lambda t: 0.5 + 0 * t))
    rep = metastability_report(s, cls, 4, [2 * 10 ** 5, 3 * 10 ** 5, 4 * 10 ** 5],
                               [0.05, 0.035, 0.025], seed=1, start_sink=0)
    assert rep.status == "ok"
    assert all(r["transitions"] > 100 for r in rep.rows)
    mp = [r["mean_passage"] for r in rep.rows]
    assert mp[0] < mp[1] < mp[2]


@pytest.mark.slow
def test_srb_peak_and_outside_mass(one_sink, one_sink_field):
    cls = classify_zeros(one_sink_field)
    sig2 = 0.9
    outside = []
    for e in (4e-3, 2e-3, 1e-3):
        s = one_sink.with_epsilon(e)
        h = srb_histogram(s, uniform_ensemble(2000, 1), int(6 / e), int(6 / e) + 20000, cls,
                          sample_every=10)
        outside.append(h.outside_H)
    fit = h.fits[0]
    assert abs(fit["center"] - 0.5) < 3 * math.sqrt(1e-3 * sig2)
    assert 0.8 <= fit["variance"] / (1e-3 * sig2 / 2) <= 1.2
    assert outside[-1] <= 0.05 and outside[0] > outside[1] > outside[2]


def test_wasserstein_identities():
    rng = np.random.default_rng(0)
    x = rng.random(5000)
    t = rng.random(5000) * 0.2
    w = np.ones(5000)
    assert wasserstein_vertical(x, t, w, x, t, w) == 0.0
    assert wasserstein_vertical(x, t, w, x, t + 0.3, w) == pytest.approx(0.3, abs=1e-12)
    assert wasserstein_vertical(0.5 * x, t, w, 0.5 + 0.5 * x, t, w) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0, 0.3), st.integers(0, 2 ** 30))
@settings(max_examples=50, deadline=None)
def test_circle_shift_distance(d, seed):
    # a cloud on an arc of length 0.2 rotated by d: no shorter way around
    a = 0.2 * np.random.default_rng(seed).random(50)
    assert circle_w1(a, np.ones(50), a + d, np.ones(50)) == pytest.approx(d, abs=1e-12)


@given(st.integers(0, 2 ** 30))
@settings(max_examples=50, deadline=None)
def test_circle_distance_matches_line_for_short_arcs(seed):
    rng = np.random.default_rng(seed)
    a = 0.3 + 0.1 * rng.random(30)
    b = 0.3 + 0.1 * rng.random(40)
    expected = stats.wasserstein_distance(a, b)
    assert circle_w1(a, np.ones(30), b, np.ones(40)) == pytest.approx(expected, abs=1e-12)
