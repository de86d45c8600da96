import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, stats

from driftlab.averaged_dynamics import classify_zeros, integrate_averaged, field_from_functions
from driftlab.ensemble import uniform_ensemble
from driftlab.statistics import srb_histogram
from driftlab.system_model import preset
from driftlab.wentzell_freidlin import (compare_invariant_measures, generator_matrix,
                                        model_from_field, model_from_functions, sde_occupation,
                                        simulate_sde, spectral_gap, stationary_density)


def one_sink_model(eps, M=1024):
    return model_from_functions(lambda t: np.sin(2 * np.pi * t) / (2 * np.pi),
                                lambda t: 0.9 + 0 * t, eps, M)


def bin_density(model, bins, sub=8):
    g = (np.arange(bins)[:, None] + (np.arange(sub) + 0.5)[None, :] / sub) / bins
    r = stationary_density(model, g.ravel()).reshape(bins, sub).mean(axis=1)
    return r / r.mean()


@given(st.floats(0.005, 0.2), st.floats(0.2, 2.0))
@settings(max_examples=10, deadline=None)
def test_generator_structure(eps, amp):
    m = model_from_functions(lambda t: amp * np.sin(2 * np.pi * t),
                             lambda t: 1 + 0.5 * np.cos(2 * np.pi * t), eps, 256)
    G = generator_matrix(m)
    W = G.weights[:, None] * G.matrix
    assert np.max(np.abs(W - W.T)) <= 1e-12 * np.max(np.abs(W))
    ev = linalg.eigvalsh(G.symmetric_form(), subset_by_index=[0, 0])
    assert abs(ev[0]) < 1e-8 * np.max(np.abs(G.matrix))
    np.testing.assert_allclose(G.matrix.sum(axis=1), 0, atol=1e-9 * np.max(np.abs(G.matrix)))


def test_stationary_vector_matches_closed_form():
    m = one_sink_model(0.02)
    G = generator_matrix(m)
    assert np.mean(np.abs(G.stationary_vector() - stationary_density(m))) < 1e-10


def test_flat_model_is_uniform():
    m = model_from_functions(lambda t: 0 * t, lambda t: 2 + 0 * t, 0.01, 512)
    np.testing.assert_allclose(stationary_density(m), 1.0, atol=1e-12)


def test_unique_peak_at_sink():
    rho = stationary_density(one_sink_model(0.01))
    assert np.argmax(rho) == 512
    assert np.sum(np.diff(np.sign(np.diff(np.append(rho, rho[0])))) < 0) == 1


def test_nonperiodic_potential_rejected():
    m = model_from_functions(lambda t: 0.3 + 0 * t, lambda t: 1 + 0 * t, 0.01)
    with pytest.raises(ValueError, match="not zero"):
        stationary_density(m)


def test_sde_occupation_matches_density():
    m = one_sink_model(0.01)
    h = sde_occupation(m, 100, 100.0, 1.0, seed=1, bins=64, sample_every=10)
    assert np.mean(np.abs(h - bin_density(m, 64))) < 0.05


def test_noiseless_paths_follow_the_ode():
    m = model_from_functions(lambda t: np.sin(4 * np.pi * t), lambda t: 1e-30 + 0 * t, 0.01, 4096)
    f = field_from_functions(lambda t: np.sin(4 * np.pi * t), lambda t: 0 * t, lambda t: 1 + 0 * t,
                             4096)
    t, paths = simulate_sde(m, [0.1, 0.6], 2.0, dt=1e-3, stride=10)
    _, th, _ = integrate_averaged(f, 0.1, 2.0, 1e-3)
    assert np.max(np.abs(paths[:, 0] - th[::10])) < 5e-3


def test_weak_step_halving():
    m = one_sink_model(0.05)
    x0 = np.full(10 ** 4, 0.3)
    _, a = simulate_sde(m, x0, 1.0, dt=1e-3, seed=3, stride=1000)
    _, b = simulate_sde(m, x0, 1.0, dt=5e-4, seed=4, stride=2000)
    se = math.sqrt(a[-1].var() / a.shape[1] + b[-1].var() / b.shape[1])
    assert abs(a[-1].mean() - b[-1].mean()) < 3 * se


def test_step_limit():
    with pytest.raises(ValueError):
        simulate_sde(one_sink_model(0.01), 0.5, 1.0, dt=2e-3)


def _passages(paths, sinks, r):
    """Confirmed passages between sinks and the mean time between them."""
    count, times = 0, []
    for p in (paths % 1.0).T:
        last, t_last = -1, 0
        for i, v in enumerate(p):
            for k, z in enumerate(sinks):
                if abs((v - z + 0.5) % 1.0 - 0.5) < r:
                    if last >= 0 and k != last:
                        count += 1
                        times.append(i - t_last)
                    if k != last:
                        last, t_last = k, i
        del p
    return count, np.mean(times) if times else np.nan


def test_sde_always_transitions():
    means = []
    inv = []
    for eps in (0.05, 0.035, 0.025):
        m = model_from_functions(lambda t: 0.25 * np.sin(4 * np.pi * t), lambda t: 1 + 0 * t,
                                 eps, 1024)
        t, paths = simulate_sde(m, np.full(20, 0.25), 400.0, dt=1e-3, seed=5, stride=20)
        n, mean = _passages(paths, (0.25, 0.75), 0.05)
        assert n > 10
        means.append(mean * 20e-3)
        inv.append(1 / eps)
    fit = stats.linregress(inv, np.log(means))
    assert fit.slope > 0 and fit.rvalue ** 2 >= 0.9


def test_pure_diffusion_gap():
    eps = 0.02
    m = model_from_functions(lambda t: 0 * t, lambda t: 1 + 0 * t, eps, 1024)
    assert spectral_gap(m) == pytest.approx(eps / 2 * (2 * np.pi) ** 2, rel=1e-4)


def test_one_sink_gap_is_uniform_and_linearized():
    gaps = [spectral_gap(one_sink_model(e)) for e in (0.05, 0.02, 0.01)]
    assert max(gaps) / min(gaps) < 2
    assert gaps[-1] == pytest.approx(1.0, rel=0.25)


def test_grid_floor():
    with pytest.raises(ValueError):
        spectral_gap(one_sink_model(0.01), grid=512)


def test_model_from_field_resamples(one_sink_field):
    m = model_from_field(one_sink_field, 0.01, M=1024)
    assert m.M == 1024
    np.testing.assert_allclose(m.drift, np.sin(2 * np.pi * m.theta) / (2 * np.pi), atol=1e-8)


def test_two_trap_mismatch_flagged():
    s = preset("two_sink_nonergodic", 0.02)
    f = field_from_functions(lambda t: np.sin(4 * np.pi * t), lambda t: 4 * np.pi * np.cos(4 * np.pi * t),
                             lambda t: 0.5 + 0 * t)
    cls = classify_zeros(f)
    h = srb_histogram(s, uniform_ensemble(500, 1, (0.2, 0.3)), 500, 3000, cls, bins=(16, 256))
    rep = compare_invariant_measures(h, model_from_field(f, 0.02))
    assert rep["masses_map"][0] == 1.0
    assert rep["masses_model"] == pytest.approx([0.5, 0.5], abs=1e-6)
    assert rep["qualitative_mismatch"]


@pytest.mark.slow
def test_one_sink_map_close_to_diffusion(one_sink, one_sink_field):
    cls = classify_zeros(one_sink_field)
    h = srb_histogram(one_sink, uniform_ensemble(2000, 2), 6000, 26000, cls, bins=(16, 256),
                      sample_every=10)
    rep = compare_invariant_measures(h, model_from_field(one_sink_field, one_sink.epsilon))
    assert rep["l1_theta_marginal"] <= 0.1
    assert not rep["qualitative_mismatch"]
    assert rep["peaks"][0]["variance_ratio"] == pytest.approx(1.0, abs=0.2)
