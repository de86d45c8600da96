import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftlab.ensemble import evolve, uniform_ensemble
from driftlab.system_model import (BuiltinParams, TorusPoint, builtin_system, circle_distance,
                                   evaluate_map, jacobian, jitter_stream, preset, wrap)

from conftest import skew

unit = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)


def test_two_sink_parameters(two_sink):
    assert two_sink.lam == 2.0
    assert two_sink.degree == 2
    assert two_sink.is_skew


def test_affine_has_constant_expansion():
    s = preset("affine_nonskew", 1e-3)
    g = np.random.default_rng(0).random((2, 500))
    np.testing.assert_allclose(s.df_dx(g[0], g[1]), 5.0, rtol=0, atol=1e-14)
    assert s.lam == 5.0


def test_nonexample_margin_accepted():
    s = preset("nonexample", 1e-3)
    assert s.lam == pytest.approx(5 - 2 * math.pi * 0.15)
    assert s.lam > 4.05


def test_nonexample_margin_rejected():
    with pytest.raises(ValueError, match="ell - 2 pi"):
        builtin_system(BuiltinParams("nonexample", ell=3.0, alpha=0.1, beta=0.05), 1e-3)


@pytest.mark.parametrize("bad", [0.0, -1e-3])
def test_epsilon_must_be_positive(bad):
    with pytest.raises(ValueError):
        preset("one_sink", bad)


def test_rejects_nonzero_mean_hat():
    with pytest.raises(ValueError, match="zero mean"):
        skew(hat_cos=(0.5, 1.0))


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown family"):
        builtin_system(BuiltinParams("tent"), 1e-3)


def test_map_at_zeros_of_drive(two_sink):
    q = evaluate_map(two_sink, TorusPoint(0.25, 0.5))
    assert q.x == 0.5
    assert abs(q.theta - 0.5) < 1e-16


def test_tiny_epsilon_freezes_theta():
    s = skew(eps=1e-300)
    for x, t in np.random.default_rng(1).random((50, 2)):
        assert evaluate_map(s, TorusPoint(x, t)).theta == t


@given(unit, unit)
@settings(max_examples=200, deadline=None)
def test_map_output_reduced(x, t):
    for s in (skew(), preset("nonexample", 1e-2)):
        q = evaluate_map(s, TorusPoint(x, t))
        assert 0.0 <= q.x < 1.0 and 0.0 <= q.theta < 1.0


@given(st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False))
def test_circle_distance_range_and_symmetry(a, b):
    d = circle_distance(a, b)
    assert 0.0 <= d <= 0.5
    assert d == pytest.approx(circle_distance(b, a), abs=1e-12)
    assert d == pytest.approx(min(abs(wrap(a) - wrap(b)), 1 - abs(wrap(a) - wrap(b))), abs=1e-12)


def test_wrap_into_unit_interval():
    v = wrap(np.array([-1e-18, -0.25, 1.0, 3.75]))
    assert np.all((v >= 0) & (v < 1))
    np.testing.assert_allclose(v[1:], [0.75, 0.0, 0.75])


def test_skew_jacobian_structure(two_sink):
    for x, t in np.random.default_rng(2).random((20, 2)):
        J = jacobian(two_sink, TorusPoint(x, t))
        assert J[0, 0] == 2.0 and J[0, 1] == 0.0


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for s in (skew(eps=0.05), preset("nonexample", 0.05), preset("affine_nonskew", 0.05)):
        for x, t in rng.uniform(0.05, 0.95, (1000, 2)):
            J = jacobian(s, TorusPoint(x, t))
            cols = []
            for dx, dt in ((h, 0.0), (0.0, h)):
                fp = np.array([s.f(x + dx, t + dt), t + dt + s.epsilon * s.omega(x + dx, t + dt)])
                fm = np.array([s.f(x - dx, t - dt), t - dt + s.epsilon * s.omega(x - dx, t - dt)])
                cols.append((fp - fm) / (2 * h))
            assert np.max(np.abs(np.column_stack(cols) - J)) < 1e-6


def test_composition_equals_ensemble_particle():
    s = preset("one_sink", 1e-3)
    ens = uniform_ensemble(3, seed=7)
    ens.x[:] = [0.1, 0.6, 0.9]
    ens.theta[:] = [0.3, 0.2, 0.7]
    out, _ = evolve(s, ens, 1000)
    for i in range(3):
        jit = jitter_stream(ens.seed, int(ens.pid[i]), 1000)
        p = TorusPoint(ens.x[i], ens.theta[i])
        for j in jit:
            p = evaluate_map(s, p, j)
        assert p.x == out.x[i]
        assert p.theta == out.theta[i]


def test_with_epsilon_keeps_family(one_sink):
    s = one_sink.with_epsilon(0.02)
    assert s.epsilon == 0.02 and s.params == one_sink.params
