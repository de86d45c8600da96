"""Velocity intervals ``Omega(theta)``, reach sets and trapping sets.

``Omega(theta)`` is the set of averages of ``omega(., theta)`` against
``f_theta``-invariant probability measures.  It is bracketed from inside by
the hull of periodic-orbit averages and from outside by the range of
``omega(., theta)``.  Every verdict computed here is two-sided: a claim is
only made when the bound that makes it sound supports it.

Slow paths move along the circle.  A step to the right is realizable where
the upper end ``omega_plus`` of ``Omega`` is large enough, a step to the left
where the lower end ``omega_minus`` is small enough.  In one dimension the
set reachable from a point is therefore an arc, found by scanning runs of
passable steps.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import _kernels as K
from .averaged_dynamics import (AssumptionViolation, classify_zeros, normalize_A2,
                                tabulate_field)
from .fast_layer import periodic_orbit_averages

__all__ = [
    "OmegaInterval",
    "OmegaTable",
    "ForbiddenVerdict",
    "TrappingReport",
    "Verdict",
    "default_period",
    "omega_interval",
    "omega_table",
    "forbidden_criterion",
    "reach_arcs",
    "trapping_sets",
    "assumption_report",
]


def default_period(degree, max_points=2 ** 16):
    """Largest period ``p <= 14`` with ``degree**p - 1 <= max_points``."""
    p = 1
    while p < 14 and degree ** (p + 1) - 1 <= max_points:
        p += 1
    return p


@dataclass(frozen=True)
class OmegaInterval:
    """Inner and outer brackets of ``Omega(theta)``.

    ``lo_out <= lo_in <= hi_in <= hi_out``.
    """

    theta: float
    lo_in: float
    hi_in: float
    lo_out: float
    hi_out: float
    period: int

    @property
    def gap(self):
        """Total width of the uncertainty between the two brackets."""
        return (self.lo_in - self.lo_out) + (self.hi_out - self.hi_in)


def _outer(sys, theta, N):
    x = (np.arange(N) + 0.5) / N
    w = sys.omega(x, np.full(N, theta))
    # half a cell times the Lipschitz constant covers the points between samples
    margin = 0.5 * sys.norms["domega_dx"] / N
    return float(w.min() - margin), float(w.max() + margin)


def omega_interval(sys, theta, P=None, N=4096):
    """Bracket ``Omega(theta)``.

    Parameters
    ----------
    sys : SystemSpec
    theta : float
    P : int, optional
        Largest period enumerated (at most 14).  Defaults to the largest
        period whose point count stays within the enumeration budget.
    N : int
        Number of samples for the range of ``omega(., theta)``.
    """
    P = default_period(sys.degree) if P is None else int(P)
    if P > 14:
        raise ValueError("P must be at most 14")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        avgs = np.array([a for _, a in periodic_orbit_averages(sys, theta, P)])
    lo_out, hi_out = _outer(sys, theta, N)
    lo_in, hi_in = float(avgs.min()), float(avgs.max())
    return OmegaInterval(float(theta) % 1.0, lo_in, hi_in, min(lo_out, lo_in),
                         max(hi_out, hi_in), P)


@dataclass(frozen=True)
class OmegaTable:
    """``Omega`` brackets on a uniform theta grid ``k / M``.

    Values between grid points are linearly interpolated (``Omega`` depends
    continuously on theta).  ``scale`` multiplies all bounds; it is the A2
    rescaling factor when the table refers to a normalized field.
    """

    theta: np.ndarray
    lo_in: np.ndarray
    hi_in: np.ndarray
    lo_out: np.ndarray
    hi_out: np.ndarray
    period: int
    scale: float = 1.0

    def scaled(self, factor):
        return OmegaTable(self.theta, factor * self.lo_in, factor * self.hi_in,
                          factor * self.lo_out, factor * self.hi_out, self.period,
                          self.scale * factor)

    def at(self, th):
        """Interpolated ``(lo_in, hi_in, lo_out, hi_out)`` at the points ``th``."""
        th = np.asarray(th, float) % 1.0
        t = np.append(self.theta, 1.0)
        out = []
        for arr in (self.lo_in, self.hi_in, self.lo_out, self.hi_out):
            out.append(np.interp(th, t, np.append(arr, arr[0])))
        return tuple(out)

    def rows(self):
        for row in zip(self.theta, self.lo_in, self.hi_in, self.lo_out, self.hi_out):
            yield tuple(float(v) for v in row)


def omega_table(sys, M=256, P=None, N=4096):
    """Tabulate :func:`omega_interval` on ``M`` theta points.

    For skew products the fiber does not move with theta and ``omega`` only
    shifts by the slow drive, so the orbits are enumerated once.
    """
    th = np.arange(M) / M
    if sys.is_skew:
        base = omega_interval(sys, 0.0, P, N)
        shift = sys.omega(np.zeros(M), th) - float(sys.omega(np.zeros(1), np.zeros(1))[0])
        return OmegaTable(th, base.lo_in + shift, base.hi_in + shift, base.lo_out + shift,
                          base.hi_out + shift, base.period)
    rows = [omega_interval(sys, t, P, N) for t in th]
    return OmegaTable(th, np.array([r.lo_in for r in rows]), np.array([r.hi_in for r in rows]),
                      np.array([r.lo_out for r in rows]), np.array([r.hi_out for r in rows]),
                      rows[0].period)


# ---------------------------------------------------------------------------
# forbidden arcs


@dataclass(frozen=True)
class ForbiddenVerdict:
    """Outcome of :func:`forbidden_criterion`.

    ``verdict`` is ``'all-forbidden'``, ``'not-all-forbidden'`` or
    ``'indeterminate'``; ``bound`` names the bracket that certified it.
    ``forward_margin`` is ``min omega_plus + eps_hat`` over the forward arc
    and ``backward_margin`` is ``eps_hat - max omega_minus`` over the
    complementary arc, both computed with that bracket (negative margins
    mean blocked).
    """

    verdict: str
    bound: str
    forward_margin: float
    backward_margin: float


def _arc_samples(a, b, n=2049):
    a = float(a) % 1.0
    b = float(b) % 1.0
    if b <= a:
        b += 1.0
    return np.linspace(a, b, n)


def forbidden_criterion(table, theta_a, theta_b, eps_hat):
    """Decide whether every slow path from ``theta_a`` to ``theta_b`` is forbidden.

    A path can go right along ``[theta_a, theta_b]`` unless ``omega_plus``
    drops to ``-eps_hat`` somewhere on that arc, and left through
    ``[theta_b, theta_a]`` unless ``omega_minus`` rises to ``eps_hat``
    somewhere on that arc.  All paths are forbidden when both routes are
    blocked.

    Blocking is certified with the outer bracket (the true ``omega_plus`` is
    below ``hi_out``).  Passability is certified with the inner bracket.

    Parameters
    ----------
    table : OmegaTable
    theta_a, theta_b : float
    eps_hat : float
    """
    fwd = _arc_samples(theta_a, theta_b)
    bwd = _arc_samples(theta_b, theta_a)
    lo_in_f, hi_in_f, lo_out_f, hi_out_f = table.at(fwd)
    lo_in_b, hi_in_b, lo_out_b, hi_out_b = table.at(bwd)
    out_fwd = float(hi_out_f.min() + eps_hat)
    out_bwd = float(eps_hat - lo_out_b.max())
    in_fwd = float(hi_in_f.min() + eps_hat)
    in_bwd = float(eps_hat - lo_in_b.max())
    if out_fwd <= 0 and out_bwd <= 0:
        return ForbiddenVerdict("all-forbidden", "outer", out_fwd, out_bwd)
    if in_fwd > 0 or in_bwd > 0:
        return ForbiddenVerdict("not-all-forbidden", "inner", in_fwd, in_bwd)
    return ForbiddenVerdict("indeterminate", "inner/outer", in_fwd, in_bwd)


# ---------------------------------------------------------------------------
# reach sets


def _runs(ok):
    """For each cell, the number of consecutive True entries starting there (cyclic)."""
    G = ok.size
    if ok.all():
        return np.full(G, G)
    run = np.zeros(G, dtype=np.int64)
    start = int(np.flatnonzero(~ok)[0])
    # walk backwards twice around the circle so every run is seeded
    acc = 0
    for k in range(2 * G):
        i = (start - k) % G
        acc = acc + 1 if ok[i] else 0
        run[i] = acc
    return run


def reach_arcs(lo, hi, eps_hat, sign):
    """Reach arcs on a cyclic grid.

    Parameters
    ----------
    lo, hi : ndarray
        ``omega_minus`` and ``omega_plus`` per cell.
    eps_hat : float
    sign : {+1, -1}
        ``+1`` for forward reach sets (a right step needs ``hi > -eps_hat``,
        a left step ``lo < eps_hat``); ``-1`` for the stricter thresholds of
        backward reach sets (``hi > eps_hat`` and ``lo < -eps_hat``).

    Returns
    -------
    right, left : ndarray of int
        Number of cells reachable to the right and to the left of each cell
        (``G`` means the whole circle).
    """
    thr = -eps_hat if sign > 0 else eps_hat
    okr = (hi > thr) & (np.roll(hi, -1) > thr)       # step c -> c + 1
    okl = (lo < -thr) & (np.roll(lo, 1) < -thr)      # step c -> c - 1
    right = _runs(okr)
    left = _runs(okl[::-1])[::-1]
    return right, left


def _arc_mask(G, c, left, right):
    m = np.zeros(G, dtype=bool)
    if left + right + 1 >= G:
        m[:] = True
        return m
    idx = (np.arange(c - left, c + right + 1)) % G
    m[idx] = True
    return m


def _backward_mask(G, target, right_s, left_s):
    """Cells from which ``target`` is reachable (strict thresholds)."""
    m = np.zeros(G, dtype=bool)
    m[target] = True
    for c in range(G):
        dr = (target - c) % G
        dl = (c - target) % G
        if right_s[c] >= dr or left_s[c] >= dl:
            m[c] = True
    return m


@dataclass(frozen=True)
class Verdict:
    """A single assumption verdict: ``'holds'``, ``'fails'`` or ``'indeterminate'``."""

    name: str
    status: str
    margin: float = float("nan")
    reason: str = ""

    def as_dict(self):
        return {"status": self.status, "margin": self.margin, "reason": self.reason}


@dataclass
class TrappingReport:
    """Reach sets, trapping sets and the A3/A4/A4* verdicts.

    Masks are boolean arrays over ``G`` cells centered at ``(c + 1/2) / G``.
    ``R_plus[i]`` is the forward reach set of sink ``i`` (outer bracket),
    ``R_minus[i]`` the set of cells from which sink ``i`` can be reached
    (inner bracket), and ``Ts[i]`` the trapping set of sink ``i``.
    """

    eps_hat: float
    sinks: np.ndarray
    grid: np.ndarray
    R_plus: list
    R_minus: list
    Ts: list
    recurrent: np.ndarray
    n_T: int
    n_Z: list
    T_Bas: float
    T_Trap: float
    A3: Verdict
    A4: Verdict
    A4_star: Verdict
    intervals: list = field(default_factory=list)

    @staticmethod
    def _arcs(mask, grid):
        G = mask.size
        if mask.all():
            return [(0.0, 1.0)]
        if not mask.any():
            return []
        h = 0.5 / G
        out = []
        start = int(np.flatnonzero(~mask)[0])
        i = 0
        while i < G:
            j = (start + i) % G
            if mask[j]:
                k = i
                while k + 1 < G and mask[(start + k + 1) % G]:
                    k += 1
                a = grid[j] - h
                out.append((float(a), float(a + (k - i + 1) / G)))
                i = k + 1
            else:
                i += 1
        return out

    def as_dict(self):
        return {
            "eps_hat": self.eps_hat,
            "sinks": self.sinks.tolist(),
            "grid_cells": int(self.grid.size),
            "R_plus": [self._arcs(m, self.grid) for m in self.R_plus],
            "R_minus": [self._arcs(m, self.grid) for m in self.R_minus],
            "trapping_sets": [self._arcs(m, self.grid) for m in self.Ts],
            "recurrent": self.recurrent.tolist(),
            "n_T": self.n_T,
            "n_Z": self.n_Z,
            "T_Bas": self.T_Bas,
            "T_Trap": self.T_Trap,
            "A3": self.A3.as_dict(),
            "A4": self.A4.as_dict(),
            "A4_star": self.A4_star.as_dict(),
            "A4_intervals": self.intervals,
        }

    def masks_rows(self):
        """Rows ``(theta, Ts_0, Ts_1, ...)`` for CSV export."""
        for c, t in enumerate(self.grid):
            yield (float(t),) + tuple(int(m[c]) for m in self.Ts)


def _basin_time(field, cls):
    """Longest averaged-flow time from the edge of ``S_k`` to ``H_k``."""
    worst = 0.0
    n = cls.n_Z
    for k in range(n):
        for a, b in ((cls.sources[k] + cls.r_plus, cls.sinks[k] - cls.r_minus),
                     (cls.sinks[k] + cls.r_minus, cls.sources[(k + 1) % n] - cls.r_plus)):
            if b < a:
                b += 1.0
            if b <= a or b - a >= 1:
                continue
            t = np.linspace(a, b, 2001)
            v = np.abs(field.omega(t))
            worst = max(worst, float(np.trapezoid(1.0 / np.maximum(v, 1e-12), t)))
    return worst


def _a4_intervals(table, cls, G):
    """Per-interval A4 evaluation between consecutive zeros."""
    zs = np.sort(cls.zeros)
    out = []
    status = "holds"
    for j in range(zs.size):
        a = zs[j]
        b = zs[(j + 1) % zs.size]
        if b <= a:
            b += 1.0
        t = np.linspace(a, b, max(16, int((b - a) * G)))[1:-1]
        lo_in, hi_in, lo_out, hi_out = table.at(t)
        inner_ok = bool(np.all((lo_in < 0) & (hi_in > 0)))
        excl = (lo_out > 0) | (hi_out < 0)
        if inner_ok:
            alt = "i"
            margin = float(np.min(np.minimum(-lo_in, hi_in)))
        elif excl.any():
            alt = "ii"
            margin = float(np.max(np.maximum(lo_out, -hi_out)))
        else:
            alt = "none"
            margin = float("nan")
            status = "indeterminate"
        out.append({"interval": [float(a), float(b)], "alternative": alt, "margin": margin})
    return status, out


def trapping_sets(sys, field, classification, eps_hat=1e-2, grid=2 ** 12, table=None,
                  M=256, P=None, N=4096):
    """Reach sets and trapping sets of the slow dynamics.

    Parameters
    ----------
    sys : SystemSpec
    field : AveragedField
        Its ``scale`` (A2 factor) is applied to ``Omega``.
    classification : ZeroClassification
    eps_hat : float
        Velocity margin of the admissible paths.
    grid : int
        Number of theta cells.
    table : OmegaTable, optional
        Precomputed unscaled table (computed with ``M``, ``P``, ``N`` otherwise).

    Returns
    -------
    TrappingReport
    """
    if eps_hat <= 0:
        raise ValueError("eps_hat must be positive")
    tab = table if table is not None else omega_table(sys, M, P, N)
    tab = tab.scaled(field.scale / tab.scale)
    G = int(grid)
    th = (np.arange(G) + 0.5) / G
    lo_in, hi_in, lo_out, hi_out = tab.at(th)

    # forward reach: the superset obtained from the outer bracket
    rp, lp = reach_arcs(lo_out, hi_out, eps_hat, +1)
    # backward reach: the subset obtained from the inner bracket
    rs, ls = reach_arcs(lo_in, hi_in, eps_hat, -1)

    sinks = classification.sinks
    sink_cells = np.minimum((sinks * G).astype(int), G - 1)
    R_plus = [_arc_mask(G, c, lp[c], rp[c]) for c in sink_cells]
    R_minus = [_backward_mask(G, c, rs, ls) for c in sink_cells]

    Ts = []
    for i, c in enumerate(sink_cells):
        target = R_minus[i]
        if target.all():
            Ts.append(np.ones(G, dtype=bool))
            continue
        runs_r = _runs(target)
        runs_l = _runs(target[::-1])[::-1]
        # R_plus(c) is inside target iff the target run through c covers it
        ts = target & (runs_r - 1 >= np.minimum(rp, G)) & (runs_l - 1 >= np.minimum(lp, G))
        Ts.append(ts)
    recurrent = np.array([bool(Ts[i][c]) for i, c in enumerate(sink_cells)])

    distinct = []
    for i in np.flatnonzero(recurrent):
        if not any(np.array_equal(Ts[i], Ts[j]) for j in distinct):
            distinct.append(int(i))
    n_T = len(distinct)
    n_Z = [int(sum(Ts[j][c] for c in sink_cells)) for j in distinct]

    covered = [float(m.mean()) for m in R_minus]
    if all(m.all() for m in R_minus):
        A3 = Verdict("A3", "holds", 1.0, "every sink is reachable from every point")
    else:
        rso, lso = reach_arcs(lo_out, hi_out, eps_hat, -1)
        outer = [_backward_mask(G, c, rso, lso) for c in sink_cells]
        if all(m.all() for m in outer):
            A3 = Verdict("A3", "indeterminate", min(covered),
                         "inner and outer brackets disagree on reachability")
        else:
            A3 = Verdict("A3", "fails", min(covered),
                         "some sink is not reachable from the whole circle")

    status, intervals = _a4_intervals(tab, classification, G)
    A4 = Verdict("A4", status,
                 float(np.nanmin([d["margin"] for d in intervals])) if status == "holds" else float("nan"),
                 "" if status == "holds" else "A4 indeterminate: 0 lies in the bracket gap")

    inner_in = (lo_in < 0) & (hi_in > 0)
    outer_out = (lo_out >= 0) | (hi_out <= 0)
    m_star = float(np.min(np.minimum(-lo_in, hi_in)))
    if inner_in.all():
        A4s = Verdict("A4*", "holds", m_star, "0 is interior to every inner bracket")
    elif outer_out.any():
        A4s = Verdict("A4*", "fails", m_star,
                      f"0 outside Omega near theta={th[np.flatnonzero(outer_out)[0]]:.4f}")
    else:
        A4s = Verdict("A4*", "indeterminate", m_star, "0 lies in the bracket gap")

    T_Bas = _basin_time(field, classification)
    lengths = [(lp[c] + rp[c] + 1) / G for c in sink_cells]
    T_Trap = float(min(1.0, max(lengths)) / eps_hat)
    return TrappingReport(float(eps_hat), sinks, th, R_plus, R_minus, Ts, recurrent, n_T,
                          n_Z, T_Bas, T_Trap, A3, A4, A4s, intervals)


def assumption_report(sys, P=None, N=4096, M=256, eps_hat=1e-2, field=None, table=None):
    """Evaluate assumptions A0 to A4* for a system.

    Returns
    -------
    dict
        ``{"A0": Verdict, ..., "A4*": Verdict}`` plus the supporting objects
        under ``"field"``, ``"classification"``, ``"trapping"`` and
        ``"rho_r"`` (entries are None when an earlier verdict failed).
    """
    out = {}
    tab = table if table is not None else omega_table(sys, M, P, N)
    gap = tab.hi_in - tab.lo_in
    if np.all(gap > 1e-8):
        out["A0"] = Verdict("A0", "holds", float(gap.min()),
                            "two periodic orbits with distinct averages at every grid theta")
    else:
        out["A0"] = Verdict("A0", "indeterminate", float(gap.min()),
                            "periodic-orbit averages coincide at some grid theta")
    fld = field if field is not None else tabulate_field(sys, M, N)
    out["field"] = fld
    out["classification"] = None
    out["trapping"] = None
    out["rho_r"] = None
    try:
        cls = classify_zeros(fld)
        out["A1"] = Verdict("A1", "holds", float(np.min(np.abs(cls.slopes))),
                            f"{cls.zeros.size} nondegenerate zeros")
    except AssumptionViolation as exc:
        out["A1"] = Verdict("A1", "fails", float("nan"), str(exc))
        for k in ("A2", "A3", "A4", "A4*"):
            out[k] = Verdict(k, "indeterminate", float("nan"), "requires A1")
        return out
    try:
        rho_r, nf = normalize_A2(sys, fld, cls)
        vals = [float(fld.psi(z)) for z in cls.sinks]
        out["A2"] = Verdict("A2", "holds", -max(vals), f"rescale factor {rho_r:.6g}")
        out["rho_r"] = rho_r
        cls = classify_zeros(nf)
        fld = nf
    except AssumptionViolation as exc:
        out["A2"] = Verdict("A2", "fails", float(exc.detail.get("psi_bar", math.nan)), str(exc))
    out["classification"] = cls
    rep = trapping_sets(sys, fld, cls, eps_hat, table=tab)
    out["trapping"] = rep
    out["A3"] = rep.A3
    out["A4"] = rep.A4
    out["A4*"] = rep.A4_star
    return out
