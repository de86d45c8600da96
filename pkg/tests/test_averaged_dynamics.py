import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftlab.averaged_dynamics import (AssumptionViolation, classify_zeros, field_from_functions,
                                        integrate_averaged, normalize_A2, tabulate_field)
from driftlab.system_model import preset

from conftest import skew

FOUR_PI = 4 * math.pi


@pytest.fixture(scope="module")
def two_sink_field(two_sink):
    return tabulate_field(two_sink)


def _sin4(M=1024):
    return field_from_functions(lambda t: np.sin(FOUR_PI * t),
                                lambda t: FOUR_PI * np.cos(FOUR_PI * t),
                                lambda t: 0.5 + 0 * t, M)


def test_two_sink_tabulation(two_sink_field):
    f = two_sink_field
    np.testing.assert_allclose(f.omega_bar, np.sin(FOUR_PI * f.theta), atol=1e-8)
    np.testing.assert_allclose(f.sigma2, 0.5, atol=1e-6)
    np.testing.assert_allclose(f.psi_bar, FOUR_PI * np.cos(FOUR_PI * f.theta), atol=1e-4)
    # the spectral derivative of the tabulated drift agrees with psi_bar
    np.testing.assert_allclose(f.d_omega(f.theta), f.psi_bar, atol=1e-4)


def test_interpolant_is_periodic(two_sink_field):
    f = two_sink_field
    for g in (f.omega, f.psi, f.var, f.d_omega):
        assert g(0.0) == pytest.approx(g(1.0 - 1e-15), abs=1e-9)


def test_affine_drift_closed_form():
    f = tabulate_field(preset("affine_nonskew", 1e-3), M=256, N=2048)
    np.testing.assert_allclose(f.omega_bar, -np.cos(2 * math.pi * f.theta) / (2 * math.pi),
                               atol=1e-6)
    assert np.all(f.sigma2 > 0)


def test_constant_drift_field():
    f = tabulate_field(skew(bar_sin=(), hat_cos=(), bar_cos=(0.3,)), M=256, N=512)
    np.testing.assert_allclose(f.omega_bar, 0.3, atol=1e-14)
    np.testing.assert_allclose(f.sigma2, 0.0, atol=1e-14)
    with pytest.raises(AssumptionViolation, match="A1 violated"):
        classify_zeros(f)


def test_classify_two_sink():
    c = classify_zeros(_sin4())
    np.testing.assert_allclose(c.zeros, [0, 0.25, 0.5, 0.75], atol=1e-9)
    np.testing.assert_allclose(c.sinks, [0.25, 0.75], atol=1e-9)
    np.testing.assert_allclose(c.sources % 1.0, [0.0, 0.5], atol=1e-9)
    assert c.n_Z == 2


def test_classify_one_sink_cosine():
    f = field_from_functions(lambda t: -np.cos(2 * np.pi * t) / (2 * np.pi),
                             lambda t: np.sin(2 * np.pi * t), lambda t: 1 + 0 * t)
    c = classify_zeros(f)
    np.testing.assert_allclose(c.sinks, [0.75], atol=1e-9)
    np.testing.assert_allclose(c.sources, [0.25], atol=1e-9)


def test_degenerate_zero_rejected():
    f = field_from_functions(lambda t: np.sin(2 * np.pi * t) ** 3, lambda t: 0 * t,
                             lambda t: 1 + 0 * t)
    with pytest.raises(AssumptionViolation) as exc:
        classify_zeros(f)
    assert exc.value.tag == "A1"


@given(st.floats(-0.45, 0.45), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_zero_alternation(phase, k):
    f = field_from_functions(lambda t: np.sin(2 * np.pi * k * (t - phase)),
                             lambda t: 2 * np.pi * k * np.cos(2 * np.pi * k * (t - phase)),
                             lambda t: 1 + 0 * t, 512)
    c = classify_zeros(f)
    assert c.n_Z == k
    for j in range(k):
        a, b = c.I(j)
        s = c.sinks[j] if c.sinks[j] >= a else c.sinks[j] + 1
        assert a < s < b


def test_H_inside_contracting_region():
    f = _sin4()
    rho_r, nf = normalize_A2(None, f, classify_zeros(f))
    c = classify_zeros(nf)
    for k, z in enumerate(c.sinks):
        t = np.linspace(*c.H(k), 201)[1:-1]
        assert np.all(nf.d_omega(t) < c.sink_slopes[k] / 2)
        assert np.all(nf.psi(t) < -0.75)


def test_normalization_factor():
    f = _sin4()
    rho_r, nf = normalize_A2(None, f, classify_zeros(f))
    assert rho_r == pytest.approx(1 / FOUR_PI, rel=1e-6)
    again, _ = normalize_A2(None, nf, classify_zeros(nf))
    assert again == pytest.approx(1.0, rel=1e-9)


def test_nonexample_A2_violation(nonex):
    f = tabulate_field(nonex, M=256, N=2048)
    c = classify_zeros(f)
    with pytest.raises(AssumptionViolation, match="A2 violated") as exc:
        normalize_A2(nonex, f, c)
    ell, a = nonex.params.ell, nonex.params.alpha
    assert exc.value.detail["psi_bar"] == pytest.approx(2 * math.pi ** 2 * a / ell, rel=0.05)


def test_equilibrium_trajectory():
    f = field_from_functions(lambda t: np.sin(2 * np.pi * t) / (2 * np.pi),
                             lambda t: np.cos(2 * np.pi * t), lambda t: 1 + 0 * t)
    t, th, ze = integrate_averaged(f, 0.5, 2.0)
    np.testing.assert_allclose(th, 0.5, atol=1e-14)
    np.testing.assert_allclose(ze, -t, atol=1e-9)


def test_step_halving():
    f = field_from_functions(lambda t: np.sin(FOUR_PI * t), lambda t: FOUR_PI * np.cos(FOUR_PI * t),
                             lambda t: 0.5 + 0 * t, 4096)
    _, a, _ = integrate_averaged(f, 0.1, 5.0, 1e-3)
    _, b, _ = integrate_averaged(f, 0.1, 5.0, 5e-4)
    assert np.max(np.abs(a - b[::2])) <= 1e-8


def test_linearized_approach_to_sink():
    f = _sin4(4096)
    th0 = 0.2
    t, th, _ = integrate_averaged(f, th0, 1.5, 1e-3)
    rate = -FOUR_PI
    for T in (0.5, 1.0, 1.5):
        i = int(round(T / 1e-3))
        assert abs(th[i] - 0.25) <= abs(th0 - 0.25) * math.exp(rate * T / 2)
