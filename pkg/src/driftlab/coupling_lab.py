"""Pushforwards of standard pairs, holonomy along center leaves and the
coupling step.

Three pieces of machinery live here.

* :func:`standard_pushforward` cuts the image of a standard pair into
  children over intervals of length between ``delta/2`` and ``delta`` and
  returns their curves, densities and weights.
* :func:`holonomy_map` slides points of one curve to a stacked curve along
  N-step center leaves by integrating the interpolation ODE in the
  homotopy parameter.  Every table is checked against an independent
  construction: the vertical fiber through the N-th iterate is pulled back
  along the inverse branches of the orbit and shot onto each curve.
  Forward iteration cannot be used for this check because x-errors grow
  like ``lambda**N``.  The derivative ``H_N'`` is continuous but varies on
  the scale ``lambda**-N``; it is evaluated pointwise from the ratio of
  x-expansions along the two orbits, never by differencing the table.
* :func:`coupling_step` splits a matched couple into a coupled part,
  transported through the holonomy, and uncoupled leftovers, and measures
  the vertical distance of the coupled points after N steps.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from numpy.polynomial import chebyshev as C

from . import _kernels as K
from .center_geometry import cone_constants
from .system_model import jitter_stream
from .ensemble import (StandardPairSpec, _cheb_fit, _make, pair_cdf, pair_from_functions,
                       pair_quantile, sample_standard_pair)

__all__ = [
    "InvarianceViolation",
    "DomainCollapse",
    "SplitInfeasible",
    "PairDecomposition",
    "HolonomyTable",
    "MatchedCouple",
    "CouplingStepResult",
    "CouplingRun",
    "standard_pushforward",
    "recovery_steps",
    "matched_couple",
    "holonomy_map",
    "holonomy_regularity_check",
    "holonomy_sweep",
    "coupling_step",
    "iterate_coupling",
]

T_COUPLING = 4.0


class InvarianceViolation(ValueError):
    """A child of a pushforward breaks the standard-pair bounds."""


class DomainCollapse(ValueError):
    """The holonomy domain is empty for the requested stacking distance."""


class SplitInfeasible(ValueError):
    """The coupled/uncoupled split of a coupling step cannot be formed."""


# ---------------------------------------------------------------------------
# pushforward of a standard pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairDecomposition:
    """Children of the one-step image of a standard pair.

    Attributes
    ----------
    parent : StandardPairSpec
    children : tuple of StandardPairSpec
        Child ``j`` lives over ``[a_j, b_j]`` (reduced so that ``0 <= a_j < 1``).
    weights : ndarray
        ``Z_j``, the parent mass carried by child ``j``.
    branches : tuple of ndarray
        Chebyshev coefficients of the inverse branch ``phi_j`` on the
        child's interval; ``phi_j`` maps it back into ``[a, b]``.
    ratios : tuple of dict
        ``bound_ratios`` of every child.
    """

    parent: StandardPairSpec
    children: tuple
    weights: np.ndarray
    branches: tuple
    ratios: tuple

    def phi(self, j, y):
        """Inverse branch ``phi_j(y)``."""
        ch = self.children[j]
        return C.chebval(ch._t(y), self.branches[j])

    @property
    def worst_ratio(self):
        """Largest bound ratio over children and constraints, with its location."""
        best = (0.0, None, None)
        for j, r in enumerate(self.ratios):
            for key, val in r.items():
                if key == "length_lower" and self.parent.length < self.parent.constants.delta / 2:
                    continue
                if val > best[0]:
                    best = (float(val), j, key)
        return best

    def sample(self, count, seed, stratified=False):
        """Particles drawn from the mixture ``sum Z_j mu_j``.

        With ``stratified`` the child counts are the rounded ``count Z_j``
        (largest remainders) and each child is sampled at the midpoints of
        equal-mass strata, which removes the binomial noise of the split.
        """
        w = self.weights / self.weights.sum()
        if stratified:
            raw = count * w
            counts = np.floor(raw).astype(int)
            extra = count - counts.sum()
            counts[np.argsort(counts - raw, kind="stable")[:extra]] += 1
            xs = [pair_quantile(ch, (np.arange(k) + 0.5) / k)
                  for ch, k in zip(self.children, counts) if k]
            ts = [ch.curve(x) for ch, x in zip([c for c, k in zip(self.children, counts) if k],
                                               xs)]
            return _make(np.concatenate(xs), np.concatenate(ts), seed, self)
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(count, w)
        seeds = rng.integers(0, 2 ** 62, size=len(self.children))
        xs, ts = [], []
        for ch, k, s in zip(self.children, counts, seeds):
            if k:
                e = sample_standard_pair(ch, int(k), int(s))
                xs.append(e.x)
                ts.append(e.lifted)
        return _make(np.concatenate(xs), np.concatenate(ts), seed, self)


def _fG(sys, pair, x):
    """``f(x, G(x))`` and its derivative along the curve."""
    F = sys._fields(x, pair.curve(x))
    return F[0], F[2] + F[3] * pair.curve(x, 1)


def _invert_fG(sys, pair, y, x0):
    x = np.array(x0, float)
    for _ in range(40):
        val, der = _fG(sys, pair, x)
        dx = (val - y) / der
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    return x


def standard_pushforward(sys, pair, check=True):
    """Decompose the image of ``pair`` under one step of the map.

    The image interval ``[f_G(a), f_G(b)]`` is cut into ``m`` equal pieces
    of length in ``[delta/2, delta]`` (one piece if the image is shorter).
    On piece ``j`` the inverse branch ``phi_j`` is computed by Newton's
    method to 1e-15 at the Chebyshev nodes, and the child is
    ``G_j = Gbar o phi_j``, ``rho_j = rho o phi_j * phi_j' / Z_j`` with
    ``Gbar(x) = G(x) + eps omega(x, G(x))``.

    Raises
    ------
    InvarianceViolation
        If ``check`` and a child exceeds one of its bounds (the message
        names the worst ratio; it usually means eps or the constants are
        too large).
    """
    e = sys.epsilon
    c = pair.constants
    a, b = pair.a, pair.b
    A, _ = _fG(sys, pair, np.array([a]))
    B, _ = _fG(sys, pair, np.array([b]))
    A, B = float(A[0]), float(B[0])
    L = B - A
    m = max(1, math.ceil(L / c.delta - 1e-12))
    cuts = A + L * np.arange(m + 1) / m
    xcuts = np.empty(m + 1)
    xcuts[0], xcuts[-1] = a, b
    if m > 1:
        guess = a + (cuts[1:-1] - A) / L * (b - a)
        xcuts[1:-1] = _invert_fG(sys, pair, cuts[1:-1], guess)
    cdf = pair_cdf(pair, xcuts)
    children, weights, branches, ratios = [], [], [], []
    for j in range(m):
        yj0, yj1 = cuts[j], cuts[j + 1]
        Z = float(cdf[j + 1] - cdf[j])
        xa, xb = xcuts[j], xcuts[j + 1]

        def phi(y, xa=xa, xb=xb, yj0=yj0, yj1=yj1):
            guess = xa + (y - yj0) / (yj1 - yj0) * (xb - xa)
            return _invert_fG(sys, pair, y, guess)

        def Gj(y, phi=phi):
            x = phi(y)
            g = pair.curve(x)
            return g + e * sys.omega(x, g)

        def rhoj(y, phi=phi, Z=Z):
            x = phi(y)
            _, der = _fG(sys, pair, x)
            return pair.density(x) / der / Z

        shift = math.floor(yj0)
        lo, hi = yj0 - shift, yj1 - shift
        child = pair_from_functions(lo, hi, lambda y: Gj(y + shift), lambda y: rhoj(y + shift),
                                    e, c, validate=False)
        children.append(child)
        weights.append(Z)
        branches.append(_cheb_fit(lambda y: phi(y + shift), lo, hi))
        ratios.append(child.bound_ratios())
    dec = PairDecomposition(pair, tuple(children), np.array(weights), tuple(branches),
                            tuple(ratios))
    if check:
        worst, j, key = dec.worst_ratio
        if worst > 1.0 + 1e-9:
            raise InvarianceViolation(f"invariance violated: child {j} bound {key} at ratio "
                                      f"{worst:.4g}")
    return dec


def _density_ratio(ratios):
    return max(ratios["rho1"], ratios["rho2"])


def recovery_steps(sys, pair, max_steps=40):
    """Number of pushforwards until a pair is back within its bounds.

    At every step the child with the worst density ratio is followed.
    Returns ``None`` if the bounds are not recovered within ``max_steps``.
    """
    current = pair
    for n in range(max_steps + 1):
        r = current.bound_ratios()
        if max(v for k, v in r.items() if k != "length_lower") <= 1.0 + 1e-9:
            return n
        dec = standard_pushforward(sys, current, check=False)
        j = int(np.argmax([_density_ratio(q) for q in dec.ratios]))
        current = dec.children[j]
    return None


# ---------------------------------------------------------------------------
# leaves: pulling a vertical fiber back along an orbit
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _reference_jitter(n):
    return jitter_stream(0, 0, max(n, 1))


def _reference(sys, x, th, n):
    """Forward pseudo-orbit whose inverse branches are followed by ``_pull``.

    The orbit carries the usual fast-coordinate jitter: without it a
    doubling orbit in floating point collapses onto the fixed point 0
    after about 53 steps.  The pulled-back orbits are exact orbits, so the
    jitter only selects which true orbit is used.
    """
    xs, ths, wind, _ = K.orbit(*sys.kernel_args, sys.epsilon, float(x), float(th), int(n),
                               _reference_jitter(int(n)))
    return xs, ths + wind


def _pull(sys, ref, tau, n):
    xs, ths = ref
    ox = np.empty(n + 1)
    ot = np.empty(n + 1)
    K.pullback(*sys.kernel_args, sys.epsilon, xs, ths, xs[n], ths[n] + tau, int(n), ox, ot)
    return ox, ot


def _shoot(sys, ref, n, curve, tau_a, tau_b, tol=1e-16, max_iter=40):
    """Offset ``tau`` of the tip for which the pulled-back base lies on ``curve``.

    ``curve(x)`` gives theta on the target curve.  Secant iteration on
    ``g(tau) = theta_0(tau) - curve(x_0(tau))``.
    Returns ``tau`` and the pulled-back orbit.
    """
    def g(tau):
        ox, ot = _pull(sys, ref, tau, n)
        return ot[0] - float(curve(ox[0])), ox, ot

    ga, _, _ = g(tau_a)
    gb, ox, ot = g(tau_b)
    for _ in range(max_iter):
        if gb == ga or abs(gb) <= tol:
            break
        tau_c = tau_b - gb * (tau_b - tau_a) / (gb - ga)
        tau_a, ga = tau_b, gb
        tau_b = tau_c
        gb, ox, ot = g(tau_b)
        if abs(tau_b - tau_a) <= 1e-17 + 1e-15 * abs(tau_b):
            break
    return tau_b, ox, ot, abs(gb)


def _zeta(sys, ox, ot, n, nbar):
    ps = K.psi_array(*sys.kernel_args, sys.epsilon, np.ascontiguousarray(ox[:n] % 1.0),
                     np.ascontiguousarray(ot[:n] % 1.0), int(nbar))
    return sys.epsilon * float(np.sum(ps))


def _log_expansion(sys, ox, ot, n, u0):
    return K.curve_expansion(*sys.kernel_args, sys.epsilon, np.ascontiguousarray(ox % 1.0),
                             np.ascontiguousarray(ot), int(n), float(u0))


@dataclass
class _Leaf:
    """Two points joined by an N-step center leaf, with their true orbits."""

    x0: float
    theta0: float
    x1: float
    theta1: float
    tip_x: float
    tip_theta: float
    distance: float
    zeta: float
    log_dH: float
    log_gamma_ratio: float
    u0_tip: float
    u1_tip: float
    residual: float


def _leaf(sys, x, curve0, slope0, curve1, slope1, n, nbar, tau_guess):
    """Connect ``curve0(x)`` to ``curve1`` along the N-step center leaf.

    ``slope*`` give ``dtheta/dx`` of the curves.  Both curves are hit by
    shooting the tip offset, so both base points are exact to rounding.
    """
    e = sys.epsilon
    ref = _reference(sys, x, float(curve0(x)), n)
    t0, ox0, ot0, r0 = _shoot(sys, ref, n, curve0, 0.0, 1e-3 * max(abs(tau_guess), 1e-12))
    t1, ox1, ot1, r1 = _shoot(sys, ref, n, curve1, t0, t0 + tau_guess)
    lg0, lc0, u0n = _log_expansion(sys, ox0, ot0, n, float(slope0(ox0[0])) / e)
    lg1, lc1, u1n = _log_expansion(sys, ox1, ot1, n, float(slope1(ox1[0])) / e)
    return _Leaf(float(ox0[0]), float(ot0[0]), float(ox1[0]), float(ot1[0]), float(ox0[n]),
                 float(ot0[n]), float(t1 - t0), _zeta(sys, ox0, ot0, n, nbar), lc0 - lc1,
                 lg0 - lg1, u0n, u1n, max(r0, r1))


# ---------------------------------------------------------------------------
# holonomy
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HolonomyTable:
    """The N-step holonomy between two stacked curves.

    Attributes
    ----------
    a, b : float
        Common interval of the curves.
    lo, hi : float
        Shrunken domain ``[a + 2 Delta Kc eps, b - 2 Delta Kc eps]``.
    Delta, epsilon : float
        The curves are ``Delta eps``-stacked.
    N : int
    x : ndarray
        Sample points (Chebyshev-Lobatto nodes of ``[lo, hi]``).
    H : ndarray
        Holonomy from the interpolation ODE.
    dH : ndarray
        Derivative from the ratio of x-expansions along the two orbits.
    zeta : ndarray
        ``zeta_N`` along the orbit of the point on the first curve.
    tip_distance : ndarray
        Vertical distance of the two N-th iterates.
    identity_error : ndarray
        Difference between ``H`` and the point found by pulling the
        vertical fiber of the N-th iterate back onto the second curve.
    log_gamma_ratio : ndarray
        ``log Gamma_N(p0) - log Gamma_N(p1)`` with ``Gamma_N`` the product
        of ``f_x`` along the orbit.
    coef : ndarray
        Chebyshev coefficients of ``H`` on ``[lo, hi]``.
    """

    a: float
    b: float
    lo: float
    hi: float
    Delta: float
    epsilon: float
    N: int
    x: np.ndarray
    H: np.ndarray
    dH: np.ndarray
    zeta: np.ndarray
    tip_distance: np.ndarray
    identity_error: np.ndarray
    log_gamma_ratio: np.ndarray
    coef: np.ndarray = field(repr=False)

    def _t(self, x):
        return (2.0 * np.asarray(x, float) - (self.lo + self.hi)) / (self.hi - self.lo)

    def __call__(self, x):
        return C.chebval(self._t(x), self.coef)

    def derivative(self, x):
        """Derivative of the interpolant (a local average of ``H_N'``)."""
        return C.chebval(self._t(x), C.chebder(self.coef)) * 2.0 / (self.hi - self.lo)

    def inverse(self, y):
        """``H^{-1}(y)`` by Newton's method."""
        y = np.asarray(y, float)
        x = y - (self(y) - y)
        for _ in range(30):
            dx = (self(x) - y) / self.derivative(x)
            x = x - dx
            if np.max(np.abs(dx)) < 1e-15:
                break
        return x

    @property
    def max_log_derivative(self):
        return float(np.max(np.abs(np.log(self.dH))))

    @property
    def orientation_preserving(self):
        return bool(np.all(self.dH > 0))

    def rows(self):
        for k in range(self.x.size):
            yield (self.x[k], self.H[k], self.dH[k], self.zeta[k], self.tip_distance[k],
                   self.identity_error[k])


def _check_stacked(curveA, curveB, epsilon):
    if abs(curveA.a - curveB.a) > 1e-15 or abs(curveA.b - curveB.b) > 1e-15:
        raise ValueError("curves are not stacked (different x-intervals)")
    xs = np.linspace(curveA.a, curveA.b, 257)
    d0 = np.max(np.abs(curveB.curve(xs) - curveA.curve(xs)))
    d1 = np.max(np.abs(curveB.curve(xs, 1) - curveA.curve(xs, 1)))
    return max(d0, d1) / epsilon


def holonomy_map(sys, curveA, curveB, N, s_steps=16, samples=33, cones=None,
                 t_max=T_COUPLING, domain=None):
    """The N-step holonomy ``H_N`` from ``curveA`` to ``curveB``.

    Parameters
    ----------
    sys : SystemSpec
    curveA, curveB : StandardPairSpec
        Stacked curves (same x-interval); only the curves are used.
    N : int
        Horizon, at most ``t_max / eps`` (rounded up).
    s_steps : int
        RK4 steps in the homotopy parameter.
    samples : int
        Number of Chebyshev-Lobatto nodes of the shrunken domain.
    domain : tuple, optional
        Sample a sub-interval of the shrunken domain instead (used to keep
        the nodes fixed across a sweep in ``Delta``).

    Raises
    ------
    DomainCollapse
        If ``2 Delta Kc eps`` exceeds half the curve length.
    """
    e = sys.epsilon
    if N < 1 or N > math.ceil(t_max / e):
        raise ValueError(f"N must lie in [1, ceil({t_max}/eps)]")
    cones = cones or cone_constants(sys)
    Delta = _check_stacked(curveA, curveB, e)
    a, b = curveA.a, curveA.b
    shrink = 2.0 * Delta * cones.Kc * e
    if shrink > 0.5 * (b - a):
        raise DomainCollapse(f"domain collapse: 2 Delta Kc eps = {shrink:.3g} exceeds half "
                             f"the curve length {(b - a) / 2:.3g}")
    lo, hi = a + shrink, b - shrink
    if domain is not None:
        if domain[0] < lo - 1e-15 or domain[1] > hi + 1e-15:
            raise DomainCollapse("requested domain leaves the shrunken holonomy domain")
        lo, hi = float(domain[0]), float(domain[1])
    j = np.arange(samples)
    x = 0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(np.pi * j / (samples - 1))
    G0, G1 = curveA.curve, curveB.curve

    def rhs(s, h):
        gs = (1 - s) * G0(h) + s * G1(h)
        dgs = (1 - s) * G0(h, 1) + s * G1(h, 1)
        sl = K.slope_array(*sys.kernel_args, e, np.ascontiguousarray(h % 1.0),
                           np.ascontiguousarray(gs % 1.0), int(N), 0.0)
        return (G1(h) - G0(h)) * sl / (1.0 - sl * dgs)

    h = x.copy()
    ds = 1.0 / s_steps
    for k in range(s_steps):
        s = k * ds
        k1 = rhs(s, h)
        k2 = rhs(s + ds / 2, h + ds / 2 * k1)
        k3 = rhs(s + ds / 2, h + ds / 2 * k2)
        k4 = rhs(s + ds, h + ds * k3)
        h = h + ds * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    coef = C.chebfit(2.0 * (x - 0.5 * (lo + hi)) / (hi - lo), h, samples - 1)

    dH = np.empty(samples)
    zeta = np.empty(samples)
    tip = np.empty(samples)
    err = np.empty(samples)
    lgr = np.empty(samples)
    gap = G1(x) - G0(x)
    for i in range(samples):
        leaf = _leaf(sys, x[i], G0, lambda z: G0(z, 1), G1, lambda z: G1(z, 1), N, cones.n_bar,
                     float(gap[i]))
        # the shot base point may differ from x[i] by rounding; move H along
        slope_h = (C.chebval(2.0 * (leaf.x0 - 0.5 * (lo + hi)) / (hi - lo), C.chebder(coef))
                   * 2.0 / (hi - lo))
        err[i] = abs(h[i] + slope_h * (leaf.x0 - x[i]) - leaf.x1)
        dH[i] = math.exp(leaf.log_dH)
        zeta[i] = leaf.zeta
        tip[i] = leaf.distance
        lgr[i] = leaf.log_gamma_ratio
    return HolonomyTable(float(a), float(b), float(lo), float(hi), float(Delta), e, int(N), x, h,
                         dH, zeta, tip, err, lgr, coef)


def holonomy_regularity_check(table, T=None, rho_reg=1.0 / 16):
    """Measured regularity of a holonomy table.

    Returns a dict with the largest ``|log H_N'|``, its ratio to ``Delta``,
    the largest identity error, and the tip distances divided by the
    predictor ``Delta eps exp(zeta_N)`` together with the band
    ``1 + 2 T rho_reg`` allowed by the distortion bound.
    """
    T = table.N * table.epsilon if T is None else T
    pred = table.Delta * table.epsilon * np.exp(table.zeta)
    ratio = table.tip_distance / pred if table.Delta > 0 else np.ones_like(pred)
    return {
        "Delta": table.Delta,
        "N": table.N,
        "T": T,
        "max_abs_log_dH": table.max_log_derivative,
        "log_dH_over_Delta": table.max_log_derivative / table.Delta if table.Delta > 0 else 0.0,
        "identity_error_max": float(np.max(table.identity_error)),
        "orientation_preserving": table.orientation_preserving,
        "distance_ratio_min": float(np.min(ratio)),
        "distance_ratio_max": float(np.max(ratio)),
        "distance_ratio_bound": 1.0 + 2.0 * T * rho_reg,
    }


def holonomy_sweep(sys, pair, deltas, N, **kwargs):
    """``max |log H_N'|`` for ``pair`` stacked under itself at several ``Delta``.

    All tables use the same sample points (the domain of the largest
    ``Delta``), so that the sweep follows fixed points of the first curve.
    Fits ``max |log H_N'| = D Delta`` through the origin and returns the
    slope ``D``, the coefficient of determination and the values.
    """
    deltas = np.asarray(deltas, float)
    cones = kwargs.pop("cones", None) or cone_constants(sys)
    shrink = 2.0 * deltas.max() * cones.Kc * sys.epsilon
    domain = (pair.a + shrink, pair.b - shrink)
    vals = []
    for d in deltas:
        t = holonomy_map(sys, pair, _shifted(pair, d * sys.epsilon), N, cones=cones,
                         domain=domain, **kwargs)
        vals.append(t.max_log_derivative)
    vals = np.array(vals)
    D = float(np.dot(deltas, vals) / np.dot(deltas, deltas))
    res = vals - D * deltas
    tot = np.sum((vals - vals.mean()) ** 2)
    r2 = 1.0 - float(np.sum(res ** 2) / tot) if tot > 0 else 1.0
    return {"deltas": deltas.tolist(), "max_abs_log_dH": vals.tolist(), "D": D, "r2": r2}


# ---------------------------------------------------------------------------
# coupling step
# ---------------------------------------------------------------------------

def _shifted(pair, h):
    G = pair.G.copy()
    G[0] += h
    return StandardPairSpec(pair.a, pair.b, G, pair.rho.copy(), pair.epsilon, pair.constants)


@dataclass(frozen=True)
class MatchedCouple:
    """Two stacked standard pairs with the same density."""

    pair0: StandardPairSpec
    pair1: StandardPairSpec

    def __post_init__(self):
        if not np.allclose(self.pair0.rho, self.pair1.rho, rtol=0, atol=1e-14):
            raise ValueError("a matched couple needs equal densities")
        _check_stacked(self.pair0, self.pair1, self.pair0.epsilon)

    @property
    def Delta(self):
        return _check_stacked(self.pair0, self.pair1, self.pair0.epsilon)


def matched_couple(pair, Delta):
    """``pair`` together with its copy lifted by ``Delta eps``."""
    return MatchedCouple(pair, _shifted(pair, Delta * pair.epsilon))


@dataclass(frozen=True, eq=False)
class CouplingStepResult:
    """Outcome of one coupling step.

    Attributes
    ----------
    m_C : float
        Coupled mass ``(1 - c_* Delta eps) exp(-4 D Delta)``.
    c_star : float
        Smallest trimming constant for which the split is feasible.
    D_holonomy : float
        Measured ``max |log H_N'| / Delta``.
    D_used : float
        Constant used in ``m_C``: the larger of ``D_holonomy`` and the
        smallest value for which the coupled density fits under the
        second pair's density.
    trims : dict
        ``a0, b0, a1, b1``: the trimmed intervals on both curves.
    uncoupled : list of dict
        Leftover pieces with their mass and a recovery-time tag
        (pushforwards until they are standard again).
    x0, x1 : ndarray
        Matched points (equal-mass quantiles of the coupled density).
    distance : ndarray
        Vertical distance of the matched points after N steps.
    predictor : ndarray
        ``Delta eps exp(zeta_N)`` at the same points.
    zeta : ndarray
    xi_ratio : float
        Largest ratio of the transported coupled density to its allowed
        bound ``exp(2 D Delta) rho``.
    wasserstein_bound : float
        ``m_C * mean(distance) + (1 - m_C)``.
    leaves : list
        Internal states of the matched points at step N (for iteration).
    """

    m_C: float
    c_star: float
    D_holonomy: float
    D_used: float
    trims: dict
    uncoupled: list
    x0: np.ndarray
    x1: np.ndarray
    distance: np.ndarray
    predictor: np.ndarray
    zeta: np.ndarray
    xi_ratio: float
    wasserstein_bound: float
    N: int
    Delta: float
    leaves: list = field(repr=False, default=None)

    @property
    def masses(self):
        """Total mass on each side (coupled plus uncoupled)."""
        out = []
        for side in (0, 1):
            out.append(self.m_C + sum(u["mass"] for u in self.uncoupled if u["side"] == side))
        return out

    def as_dict(self):
        return {
            "m_C": self.m_C,
            "c_star": self.c_star,
            "D_holonomy": self.D_holonomy,
            "D_used": self.D_used,
            "Delta": self.Delta,
            "N": self.N,
            "trims": self.trims,
            "uncoupled": self.uncoupled,
            "xi_ratio": self.xi_ratio,
            "wasserstein_bound": self.wasserstein_bound,
            "distance_median": float(np.median(self.distance)),
            "distance_max": float(np.max(self.distance)),
            "predictor_median": float(np.median(self.predictor)),
            "zeta_median": float(np.median(self.zeta)),
            "masses": self.masses,
        }


def _recovery_short(length, delta, lam):
    if length >= delta / 2:
        return 0
    return int(math.ceil(math.log(delta / 2 / max(length, 1e-300)) / math.log(lam)))


def coupling_step(sys, couple, N, samples=64, table_samples=33, s_steps=16, cones=None, D=None):
    """One coupling step on a ``Delta eps``-matched couple.

    The first pair is trimmed by mass ``c_* Delta eps / 2`` at each end,
    the trimmed interval is carried to the second curve by ``H_N`` and the
    coupled density is transported with it.  ``c_*`` is found by bisection
    as the smallest value for which the trimmed interval and its image stay
    inside the holonomy domain, at distance at least ``Delta eps`` from the
    ends, and the second curve loses at most ``c_* Delta eps`` at each end.

    Parameters
    ----------
    D : float, optional
        Holonomy constant.  By default the measured one, raised if needed
        so that the coupled density fits under the second density.

    Raises
    ------
    SplitInfeasible
        If no trimming works, or a prescribed ``D`` violates the density
        inequality (the message reports the ratio).
    """
    e = sys.epsilon
    cones = cones or cone_constants(sys)
    p0, p1 = couple.pair0, couple.pair1
    Delta = couple.Delta
    de = Delta * e
    table = holonomy_map(sys, p0, p1, N, s_steps=s_steps, samples=table_samples, cones=cones)
    a, b = p0.a, p0.b

    def split(c):
        m = 0.5 * c * de
        if not 0 <= m < 0.5:
            return None
        a0, b0 = pair_quantile(p0, [m, 1 - m])
        if a0 < table.lo or b0 > table.hi:
            return None
        a1, b1 = float(table(a0)), float(table(b0))
        if min(a0 - a, b - b0, a1 - a, b - b1) < de:
            return None
        F1 = pair_cdf(p1, np.array([a1, b1]))
        if F1[0] > c * de or 1 - F1[1] > c * de:
            return None
        return float(a0), float(b0), a1, b1

    c_hi = 1.0 / de
    if split(c_hi * (1 - 1e-9)) is None:
        raise SplitInfeasible("split infeasible: no trimming keeps the coupled interval inside "
                              "the holonomy domain")
    c_lo = 0.0
    if split(c_lo) is None:
        for _ in range(60):
            mid = 0.5 * (c_lo + c_hi)
            if split(mid) is None:
                c_lo = mid
            else:
                c_hi = mid
            if c_hi - c_lo < 1e-9 * c_hi:
                break
        c_star = c_hi
    else:
        c_star = 0.0
    a0, b0, a1, b1 = split(c_star)
    m0 = 1.0 - c_star * de
    F1 = pair_cdf(p1, np.array([a1, b1]))
    m1 = float(F1[1] - F1[0])

    # the transported coupled density against the second density
    # H_N' is only known pointwise, so its extreme sampled value is used
    y = np.linspace(a1, b1, 513)
    xpre = table.inverse(y)
    rho_ratio = float(np.max(p0.density(xpre) / p1.density(y)))
    base_ratio = rho_ratio * math.exp(table.max_log_derivative) / m0
    D_hol = table.max_log_derivative / Delta if Delta > 0 else 0.0
    D_need = max(0.0, math.log(base_ratio) / (2 * Delta)) if Delta > 0 else 0.0
    if D is None:
        D_used = max(D_hol, D_need)
    else:
        D_used = float(D)
    xi_ratio = base_ratio / math.exp(2 * D_used * Delta)
    if xi_ratio > 1 + 1e-12:
        raise SplitInfeasible(f"split infeasible: coupled density exceeds its bound by the "
                              f"factor {xi_ratio:.4g}")
    m_C = m0 * math.exp(-4 * D_used * Delta)
    if not 0 < m_C <= 1:
        raise SplitInfeasible(f"split infeasible: coupled mass {m_C:.4g}")

    # matched points: equal-mass quantiles of the coupled density
    m = 0.5 * c_star * de
    u = m + (1 - 2 * m) * (np.arange(samples) + 0.5) / samples
    x0 = pair_quantile(p0, u)
    x1 = table(x0)
    dist = np.empty(samples)
    zeta = np.empty(samples)
    leaves = []
    gap = p1.curve(x0) - p0.curve(x0)
    for i in range(samples):
        lf = _leaf(sys, x0[i], p0.curve, lambda z: p0.curve(z, 1), p1.curve,
                   lambda z: p1.curve(z, 1), N, cones.n_bar, float(gap[i]))
        dist[i] = lf.distance
        zeta[i] = lf.zeta
        leaves.append(lf)
    pred = de * np.exp(zeta)

    lam = sys.lam
    delta = p0.constants.delta
    tag_u1 = (int(math.ceil(math.log(2 * (1 + 1 / (2 * D_used * Delta))) / math.log(lam)))
              if D_used * Delta > 0 else 0)
    uncoupled = [
        {"side": 0, "piece": "left", "interval": [a, a0], "mass": m,
         "recovery": _recovery_short(a0 - a, delta, lam)},
        {"side": 0, "piece": "right", "interval": [b0, b], "mass": m,
         "recovery": _recovery_short(b - b0, delta, lam)},
        {"side": 0, "piece": "remainder", "interval": [a0, b0], "mass": m0 - m_C,
         "recovery": 0},
        {"side": 1, "piece": "left", "interval": [a, a1], "mass": float(F1[0]),
         "recovery": _recovery_short(a1 - a, delta, lam)},
        {"side": 1, "piece": "right", "interval": [b1, b], "mass": float(1 - F1[1]),
         "recovery": _recovery_short(b - b1, delta, lam)},
        {"side": 1, "piece": "remainder", "interval": [a1, b1], "mass": m1 - m_C,
         "recovery": tag_u1},
    ]
    w_bound = m_C * float(np.mean(dist)) + (1 - m_C)
    return CouplingStepResult(m_C, c_star, D_hol, D_used,
                              {"a0": a0, "b0": b0, "a1": a1, "b1": b1}, uncoupled, x0, x1,
                              dist, pred, zeta, xi_ratio, w_bound, int(N), float(Delta), leaves)


@dataclass(frozen=True)
class CouplingRun:
    """Repeated coupling steps on the matched points of one couple.

    ``steps[k]`` holds the median distance after step ``k + 1``, the
    contraction factor relative to the previous median (the first one is
    relative to ``Delta eps``) and the median ``zeta_N``.
    """

    first: CouplingStepResult
    steps: list
    distances: np.ndarray

    def as_dict(self):
        return {"first_step": self.first.as_dict(), "steps": self.steps}


def iterate_coupling(sys, couple, N, steps=5, samples=64, cones=None, **kwargs):
    """Run :func:`coupling_step` and then follow its matched points.

    After the first step every matched couple is a pair of points on a
    common vertical fiber together with the slopes of the image curves
    through them.  Each further step slides the lower point along its
    N-step center leaf onto the line through the upper point with the
    upper curve's slope, and records the new vertical distance at the tip.
    """
    e = sys.epsilon
    cones = cones or cone_constants(sys)
    first = coupling_step(sys, couple, N, samples=samples, cones=cones, **kwargs)
    de = couple.Delta * e
    dists = [first.distance.copy()]
    records = [{"step": 1, "median_distance": float(np.median(first.distance)),
                "factor": float(np.median(first.distance) / de),
                "zeta_median": float(np.median(first.zeta))}]
    state = [(lf.tip_x, lf.tip_theta, lf.tip_theta + lf.distance, lf.u0_tip, lf.u1_tip)
             for lf in first.leaves]
    prev = np.median(first.distance)
    for k in range(2, steps + 1):
        new_state = []
        d = np.empty(len(state))
        z = np.empty(len(state))
        for i, (x, t0, t1, u0, u1) in enumerate(state):
            xa = float(x)

            def line0(q, t0=t0, u0=u0, xa=xa):
                return t0 + e * u0 * (q - xa)

            def line1(q, t1=t1, u1=u1, xa=xa):
                return t1 + e * u1 * (q - xa)

            lf = _leaf(sys, xa, line0, lambda q, u0=u0: e * u0, line1, lambda q, u1=u1: e * u1,
                       N, cones.n_bar, float(t1 - t0))
            d[i] = lf.distance
            z[i] = lf.zeta
            new_state.append((lf.tip_x % 1.0, lf.tip_theta, lf.tip_theta + lf.distance,
                              lf.u0_tip, lf.u1_tip))
        med = float(np.median(d))
        records.append({"step": k, "median_distance": med, "factor": med / prev,
                        "zeta_median": float(np.median(z))})
        prev = med
        dists.append(d)
        state = new_state
    return CouplingRun(first, records, np.array(dists))
