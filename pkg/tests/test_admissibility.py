import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftlab.admissibility import (assumption_report, default_period, forbidden_criterion,
                                    omega_interval, omega_table, reach_arcs, trapping_sets)
from driftlab.averaged_dynamics import classify_zeros, normalize_A2, tabulate_field
from driftlab.fast_layer import averaged_drift
from driftlab.system_model import preset

from conftest import skew


@pytest.fixture(scope="module")
def nonergodic():
    return preset("two_sink_nonergodic", 0.02)


@pytest.fixture(scope="module")
def ergodic():
    return preset("two_sink_ergodic", 0.05)


@pytest.fixture(scope="module")
def reports(nonergodic, ergodic, one_sink):
    return {name: assumption_report(s) for name, s in
            (("nonergodic", nonergodic), ("ergodic", ergodic), ("one_sink", one_sink))}


def test_default_period():
    assert default_period(2) == 14
    assert default_period(5) == 6


@given(st.floats(0, 1, exclude_max=True))
@settings(max_examples=10, deadline=None)
def test_bracket_ordering(theta):
    oi = omega_interval(preset("nonexample", 1e-3), theta, P=4)
    assert oi.lo_out <= oi.lo_in <= oi.hi_in <= oi.hi_out


@pytest.mark.parametrize("theta", [0.1, 0.3, 0.6])
def test_average_inside_inner_bracket(nonex, theta):
    oi = omega_interval(nonex, theta)
    assert oi.lo_in <= averaged_drift(nonex, theta) <= oi.hi_in


def test_peaked_fluctuation_inner_interval(ergodic):
    for theta in (0.1, 0.4, 0.9):
        oi = omega_interval(ergodic, theta)
        wbar = math.sin(4 * math.pi * theta)
        assert oi.hi_in == pytest.approx(wbar + 3, abs=1e-12)
        assert oi.lo_in <= wbar
        # the inner bracket reaches into [1, 2]
        assert oi.hi_in >= 2 and oi.lo_in <= 1


def test_no_fluctuation_collapses_brackets():
    s = skew(hat_cos=())
    oi = omega_interval(s, 0.1)
    w = math.sin(4 * math.pi * 0.1)
    for v in (oi.lo_in, oi.hi_in, oi.lo_out, oi.hi_out):
        assert v == pytest.approx(w, abs=1e-12)


def test_low_period_inner_bracket(two_sink):
    oi = omega_interval(two_sink, 0.2, P=2)
    w = math.sin(4 * math.pi * 0.2)
    assert oi.lo_in <= w - 0.5 + 1e-12 and oi.hi_in >= w + 1 - 1e-12


def test_saddle_arcs_forbidden(nonergodic):
    tab = omega_table(nonergodic)
    for a, b in ((0.25, 0.75), (0.75, 0.25)):
        v = forbidden_criterion(tab, a, b, 0.25)
        assert v.verdict == "all-forbidden" and v.bound == "outer"


def test_ergodic_arcs_passable(ergodic):
    tab = omega_table(ergodic)
    for a, b in ((0.25, 0.75), (0.75, 0.25), (0.0, 0.5)):
        assert forbidden_criterion(tab, a, b, 0.25).verdict == "not-all-forbidden"


def test_deterministic_flow_is_one_way():
    s = skew(bar_sin=(), bar_cos=(0.5, 0.25), hat_cos=())
    tab = omega_table(s, M=256)
    v = forbidden_criterion(tab, 0.1, 0.4, 0.01)
    assert v.verdict == "not-all-forbidden" and v.forward_margin > 0 and v.backward_margin < 0


def test_reach_arcs_small_example():
    lo = np.array([-1.0, -1.0, 1.0, -1.0])
    hi = np.array([1.0, -1.0, 1.0, 1.0])
    right, left = reach_arcs(lo, hi, 0.1, +1)
    # a step c -> c + 1 needs hi > -eps_hat at both cells; c -> c - 1 needs lo < eps_hat
    assert right.tolist() == [0, 0, 2, 1]
    assert left.tolist() == [1, 2, 0, 0]


def test_nonergodic_trapping(reports):
    tr = reports["nonergodic"]["trapping"]
    assert tr.n_T == 2 and tr.recurrent.all()
    assert not np.any(tr.Ts[0] & tr.Ts[1])
    assert reports["nonergodic"]["A3"].status == "fails"
    assert reports["nonergodic"]["A4"].status == "holds"
    assert {d["alternative"] for d in tr.intervals} == {"ii"}


def test_ergodic_trapping(reports):
    tr = reports["ergodic"]["trapping"]
    assert tr.n_T == 1 and tr.Ts[0].all() and tr.n_Z == [2]
    assert reports["ergodic"]["A3"].status == "holds"


def test_one_sink_report(reports):
    r = reports["one_sink"]
    assert r["trapping"].n_T == 1
    assert r["A0"].status == "holds" and r["A3"].status == "holds"


def test_trapping_sets_are_forward_closed(nonergodic):
    f = tabulate_field(nonergodic)
    c = classify_zeros(f)
    _, nf = normalize_A2(nonergodic, f, c)
    c = classify_zeros(nf)
    tab = omega_table(nonergodic)
    rep = trapping_sets(nonergodic, nf, c, table=tab)
    sc = tab.scaled(nf.scale)
    lo_in, hi_in, lo_out, hi_out = sc.at(rep.grid)
    right, left = reach_arcs(lo_out, hi_out, rep.eps_hat, +1)
    G = rep.grid.size
    for ts in rep.Ts:
        for cidx in np.flatnonzero(ts)[::37]:
            idx = np.arange(cidx - min(left[cidx], G), cidx + min(right[cidx], G) + 1) % G
            assert ts[idx].all()


def test_nonexample_A2_verdict(nonex):
    r = assumption_report(nonex)
    assert r["A2"].status == "fails"
    assert "A2 violated" in r["A2"].reason
    assert r["A2"].margin == pytest.approx(2 * math.pi ** 2 * 0.05 / 5, rel=0.05)
