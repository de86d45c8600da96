import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from driftlab.averaged_dynamics import tabulate_field
from driftlab.ensemble import (default_constants, evolve, flat_pair, pair_cdf, pair_from_functions,
                               pair_quantile, read_binary, sample_standard_pair, uniform_ensemble,
                               write_binary)
from driftlab.system_model import preset

from conftest import skew


@pytest.fixture(scope="module")
def sloped(nonex):
    c = default_constants(nonex)
    a, L = 0.2, c.delta
    e = nonex.epsilon
    return pair_from_functions(a, a + L, lambda x: 0.4 + 0.5 * e * c.c1 * (x - a),
                               lambda x: np.exp(0.5 * c.c2 * (x - a)), e, c)


def test_flat_pair_mean(one_sink):
    p = flat_pair(one_sink, 0.3, 0.5)
    ens = sample_standard_pair(p, 20000, 1)
    sd = p.length / math.sqrt(12 * ens.size)
    assert abs(ens.x.mean() - 0.5 * (p.a + p.b)) < 3 * sd
    assert np.all(ens.theta == 0.5)


def test_sampled_theta_mean_matches_quadrature(sloped):
    ens = sample_standard_pair(sloped, 50000, 2)
    se = ens.theta.std(ddof=1) / math.sqrt(ens.size)
    assert abs(ens.theta.mean() - sloped.mean_theta()) < 3 * se


def test_sampling_is_deterministic(sloped):
    a = sample_standard_pair(sloped, 1000, 9)
    b = sample_standard_pair(sloped, 1000, 9)
    assert a.x.tobytes() == b.x.tobytes() and a.theta.tobytes() == b.theta.tobytes()


def test_weights_normalized(sloped):
    ens = sample_standard_pair(sloped, 777, 3)
    assert np.all(ens.weight > 0) and ens.weight.sum() == pytest.approx(1.0, abs=1e-12)
    sub = ens.subset(ens.x < ens.x.mean())
    assert sub.weight.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_quantile_inverts_cdf(u):
    c = default_constants(preset("nonexample", 1e-3))
    p = pair_from_functions(0.1, 0.1 + c.delta, lambda x: 0.0 * x,
                            lambda x: np.exp(c.c2 * 0.9 * (x - 0.1)), 1e-3, c)
    x = pair_quantile(p, u)[0]
    assert p.a <= x <= p.b
    assert pair_cdf(p, x) == pytest.approx(u, abs=1e-13)


def test_density_bounds_enforced(nonex):
    c = default_constants(nonex)
    with pytest.raises(ValueError, match="rho1"):
        pair_from_functions(0.1, 0.1 + c.delta, lambda x: 0 * x,
                            lambda x: np.exp(2 * c.c2 * x), nonex.epsilon, c)
    with pytest.raises(ValueError, match="length"):
        flat_pair(nonex, 0.1, 0.0, length=2 * c.delta)


def test_tiny_epsilon_freezes_slow_coordinate():
    s = skew(eps=1e-300)
    ens = uniform_ensemble(500, 4)
    out, tr = evolve(s, ens, 200, stride=50)
    assert np.array_equal(out.lifted, ens.lifted)
    assert np.all(tr.dtheta == 0)


def test_stride_must_divide(one_sink):
    with pytest.raises(ValueError):
        evolve(one_sink, uniform_ensemble(10, 0), 10, stride=3)


def test_binary_round_trip(tmp_path, one_sink):
    ens, _ = evolve(one_sink, uniform_ensemble(100, 5), 20)
    p = tmp_path / "ens.bin"
    write_binary(p, ens)
    back = read_binary(p)
    for k in ("x", "theta", "winding", "weight", "zeta", "pid"):
        assert np.array_equal(getattr(ens, k), getattr(back, k))
    assert (back.seed, back.n) == (ens.seed, ens.n)


def test_evolution_continues_streams(one_sink):
    ens = uniform_ensemble(50, 6)
    whole, _ = evolve(one_sink, ens, 100)
    half, _ = evolve(one_sink, ens, 40)
    rest, _ = evolve(one_sink, half, 60)
    assert np.array_equal(whole.x, rest.x) and np.array_equal(whole.theta, rest.theta)


@pytest.mark.slow
def test_large_deviation_fraction_decays(one_sink, one_sink_field):
    fr = []
    eps = (4e-3, 2e-3, 1e-3)
    for e in eps:
        s = one_sink.with_epsilon(e)
        n = int(round(1 / e))
        out, tr = evolve(s, uniform_ensemble(10 ** 5, 2, (0.5, 0.5)), n, stride=n // 50,
                         field=one_sink_field)
        fr.append(np.mean(np.max(np.abs(tr.dtheta), axis=0) > 0.1))
    assert fr[0] > fr[1] > fr[2] > 0
    fit = stats.linregress(1 / np.array(eps), np.log(fr))
    assert fit.slope < 0 and fit.rvalue ** 2 > 0.9
