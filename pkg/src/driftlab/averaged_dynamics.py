"""Averaged drift, its zeros and the neighborhoods of sinks and sources.

The averaged field is tabulated on a uniform theta grid.  Values between
grid points come from periodic cubic splines; derivatives are obtained by
spectral differentiation of the tabulated values and interpolated in the
same way.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .center_geometry import cone_constants, psi_bar as _psi_bar
from .fast_layer import (green_kubo_variance, invariant_density, averaged_drift,
                         ulam_operator)

__all__ = [
    "AveragedField",
    "ZeroClassification",
    "AssumptionViolation",
    "tabulate_field",
    "field_from_functions",
    "classify_zeros",
    "normalize_A2",
    "integrate_averaged",
]


class AssumptionViolation(RuntimeError):
    """A structural assumption fails; ``tag`` names it (e.g. 'A1', 'A2')."""

    def __init__(self, tag, message, detail=None):
        super().__init__(f"{tag} violated: {message}")
        self.tag = tag
        self.detail = detail or {}


def _spectral_derivative(values):
    M = values.size
    k = np.fft.rfftfreq(M, d=1.0 / M)
    spec = np.fft.rfft(values) * (2j * math.pi * k)
    if M % 2 == 0:
        spec[-1] = 0.0
    return np.fft.irfft(spec, n=M)


def _periodic_spline(theta, values):
    t = np.append(theta, 1.0)
    v = np.append(values, values[0])
    return CubicSpline(t, v, bc_type="periodic")


@dataclass(frozen=True, eq=False)
class AveragedField:
    """Tabulated averaged drift ``omega_bar``, rate ``psi_bar`` and variance ``sigma2``.

    Attributes
    ----------
    theta : ndarray
        Uniform grid ``k / M``.
    omega_bar, psi_bar, sigma2 : ndarray
    gk_certificate : ndarray
        Magnitude of the last Green-Kubo term used at each grid point.
    scale : float
        Factor applied to omega by the A2 normalization (1 if none).
    provenance : dict
        Resolution settings.
    """

    theta: np.ndarray
    omega_bar: np.ndarray
    psi_bar: np.ndarray
    sigma2: np.ndarray
    gk_certificate: np.ndarray
    scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        d_om = _spectral_derivative(self.omega_bar)
        d_ps = _spectral_derivative(self.psi_bar)
        object.__setattr__(self, "_s_om", _periodic_spline(self.theta, self.omega_bar))
        object.__setattr__(self, "_s_dom", _periodic_spline(self.theta, d_om))
        object.__setattr__(self, "_s_ps", _periodic_spline(self.theta, self.psi_bar))
        object.__setattr__(self, "_s_dps", _periodic_spline(self.theta, d_ps))
        object.__setattr__(self, "_s_s2", _periodic_spline(self.theta, self.sigma2))
        object.__setattr__(self, "d_omega_bar_table", d_om)

    @property
    def M(self):
        return self.theta.size

    def omega(self, th):
        return self._s_om(np.asarray(th) % 1.0)

    def d_omega(self, th):
        return self._s_dom(np.asarray(th) % 1.0)

    def psi(self, th):
        return self._s_ps(np.asarray(th) % 1.0)

    def d_psi(self, th):
        return self._s_dps(np.asarray(th) % 1.0)

    def var(self, th):
        return self._s_s2(np.asarray(th) % 1.0)

    def flagged(self, limit=1e-6):
        """Grid points whose Green-Kubo truncation certificate exceeds ``limit``."""
        return np.flatnonzero(self.gk_certificate > limit)


def tabulate_field(sys, M=256, N=4096, gk_terms=40, cones=None, gk_N=None):
    """Tabulate ``omega_bar``, ``psi_bar`` and ``sigma2`` on ``M`` theta points.

    For skew products the fiber and the fluctuation do not depend on
    theta, so the density and the Green-Kubo sum are computed once.

    Parameters
    ----------
    sys : SystemSpec
    M : int
        Theta grid size, at least 256.
    N : int
        Ulam resolution for densities and drifts.
    gk_terms : int
        Maximum number of Green-Kubo terms.
    gk_N : int, optional
        Ulam resolution for the Green-Kubo sums (defaults to ``2 N``).
    """
    if M < 256:
        raise ValueError("M must be at least 256")
    cones = cones if cones is not None else cone_constants(sys)
    gk_N = gk_N or 2 * N
    th = np.arange(M) / M
    om = np.empty(M)
    ps = np.empty(M)
    s2 = np.empty(M)
    cert = np.empty(M)
    if sys.is_skew:
        rho = invariant_density(sys, 0.0, N)
        gk = green_kubo_variance(sys, 0.0, gk_N, gk_terms)
        for i, t in enumerate(th):
            om[i] = averaged_drift(sys, t, density=rho)
            ps[i] = _psi_bar(sys, t, cones=cones, density=rho)
        s2[:] = gk.value
        cert[:] = gk.last_term
    else:
        for i, t in enumerate(th):
            U = ulam_operator(sys, t, N)
            rho = invariant_density(sys, t, operator=U)
            om[i] = averaged_drift(sys, t, density=rho)
            ps[i] = _psi_bar(sys, t, cones=cones, density=rho)
            if gk_N == N:
                gk = green_kubo_variance(sys, t, M=gk_terms, density=rho, operator=U)
            else:
                gk = green_kubo_variance(sys, t, gk_N, gk_terms)
            s2[i] = gk.value
            cert[i] = gk.last_term
    prov = {"N": N, "M": M, "gk_terms": gk_terms, "gk_N": gk_N, "n_bar": cones.n_bar,
            "epsilon": sys.epsilon}
    return AveragedField(th, om, ps, s2, cert, 1.0, prov)


def field_from_functions(omega_bar, psi_bar, sigma2, M=1024):
    """Build a field from closed-form callables (useful for tests and models)."""
    th = np.arange(M) / M
    return AveragedField(th, np.asarray(omega_bar(th), float) * np.ones(M),
                         np.asarray(psi_bar(th), float) * np.ones(M),
                         np.asarray(sigma2(th), float) * np.ones(M),
                         np.zeros(M), 1.0, {"M": M, "source": "closed form"})


@dataclass(frozen=True)
class ZeroClassification:
    """Zeros of ``omega_bar`` and the neighborhoods built around them.

    Sinks are ``sinks[k]``; ``sources[k]`` is the source that precedes
    ``sinks[k]`` going around the circle, so that
    ``sources[k] < sinks[k] < sources[k+1]`` cyclically.

    Attributes
    ----------
    zeros : ndarray
        All zeros, sorted.
    slopes : ndarray
        ``omega_bar'`` at each zero.
    sinks, sources : ndarray
    sink_slopes, source_slopes : ndarray
    r_minus, r_plus : float
        Radii of ``H_k = B(sink_k, r_minus)`` and ``S_k = B(source_k, r_plus)``.
    W_minus, W_plus : list of (float, float)
        Arc ``(center - a, center + b)`` of the component of ``W_-`` (resp.
        ``W_+``) containing each sink (resp. source), as offsets ``(a, b)``.
    psi_used : bool
        Whether the ``psi_bar < -3/4`` condition entered ``r_minus`` (only
        when the A2 normalization succeeded).
    """

    zeros: np.ndarray
    slopes: np.ndarray
    sinks: np.ndarray
    sources: np.ndarray
    sink_slopes: np.ndarray
    source_slopes: np.ndarray
    r_minus: float
    r_plus: float
    W_minus: list
    W_plus: list
    psi_used: bool
    rho_r: float

    @property
    def n_Z(self):
        return self.sinks.size

    def H(self, k):
        return (self.sinks[k] - self.r_minus, self.sinks[k] + self.r_minus)

    def H_hat(self, k):
        r = 0.75 * self.r_minus
        return (self.sinks[k] - r, self.sinks[k] + r)

    def S(self, k):
        return (self.sources[k] - self.r_plus, self.sources[k] + self.r_plus)

    def I(self, k):
        """Forward basin ``[source_k, source_{k+1}]`` (lifted, increasing)."""
        a = self.sources[k]
        b = self.sources[(k + 1) % self.n_Z]
        return (a, b if b > a else b + 1.0)

    def I_hat(self, k):
        """Arc ``[sink_{k-1}, sink_k]`` around ``source_k`` (lifted, increasing)."""
        a = self.sinks[(k - 1) % self.n_Z]
        b = self.sinks[k]
        return (a, b if b > a else b + 1.0)

    def in_H(self, theta):
        """Index of the ``H_k`` containing each theta, or -1."""
        theta = np.atleast_1d(np.asarray(theta, float))
        out = np.full(theta.shape, -1)
        for k, c in enumerate(self.sinks):
            d = np.abs((theta - c + 0.5) % 1.0 - 0.5)
            out[d < self.r_minus] = k
        return out

    def as_dict(self):
        return {
            "zeros": self.zeros.tolist(),
            "slopes": self.slopes.tolist(),
            "sinks": self.sinks.tolist(),
            "sources": self.sources.tolist(),
            "sink_slopes": self.sink_slopes.tolist(),
            "source_slopes": self.source_slopes.tolist(),
            "n_Z": int(self.n_Z),
            "r_minus": self.r_minus,
            "r_plus": self.r_plus,
            "psi_condition_used": self.psi_used,
            "rho_r": self.rho_r,
        }


def _largest_radius(center, ok, rmax=0.5, samples=401, iters=50):
    """Largest r <= rmax such that ``ok`` holds on a sampling of B(center, r)."""
    def good(r):
        t = center + np.linspace(-r, r, samples)
        return bool(np.all(ok(t)))

    lo, hi = 0.0, rmax
    if good(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if good(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _component(center, ok, step=1e-4):
    """Offsets ``(a, b)`` of the component of {ok} containing ``center``."""
    a = 0.0
    while a < 0.5 and ok(np.array([center - a - step]))[0]:
        a += step
    b = 0.0
    while b < 0.5 and ok(np.array([center + b + step]))[0]:
        b += step
    return (a, b)


def classify_zeros(field, tol=1e-3, theta_cap=None):
    """Locate and classify the zeros of ``omega_bar``.

    Zeros are bracketed by sign changes on the grid and refined by Brent's
    method to 1e-10.  ``r_minus`` is the largest radius for which every
    ``H_k`` satisfies ``omega_bar' < omega_bar'(sink_k) / 2`` and, when the
    A2 normalization is available, ``psi_bar < -3/4`` after normalization.

    Parameters
    ----------
    field : AveragedField
    tol : float
        Nondegeneracy threshold on ``|omega_bar'|`` at a zero.
    theta_cap : float, optional
        Extra upper bound on ``r_minus`` (for instance the radius on which
        Omega contains a fixed interval around 0).

    Raises
    ------
    AssumptionViolation
        Tag 'A1' if there is no zero or a zero is degenerate.
    """
    th = field.theta
    v = field.omega_bar
    M = th.size
    zeros = []
    for i in range(M):
        a, b = v[i], v[(i + 1) % M]
        ta, tb = th[i], th[i] + 1.0 / M
        if a == 0.0:
            zeros.append(ta)
        elif a * b < 0:
            z = brentq(lambda t: float(field.omega(t)), ta, tb, xtol=1e-10, rtol=1e-14)
            zeros.append(z % 1.0)
    if not zeros:
        raise AssumptionViolation("A1", "omega_bar has no zeros")
    zeros = np.sort(np.array(zeros))
    slopes = np.array([float(field.d_omega(z)) for z in zeros])
    bad = np.abs(slopes) <= tol
    if bad.any():
        raise AssumptionViolation("A1", f"degenerate zero at theta={zeros[bad][0]:.6g}",
                                  {"zeros": zeros[bad].tolist()})
    sinks = zeros[slopes < 0]
    sources = zeros[slopes > 0]
    # order sources so that sources[k] precedes sinks[k]
    src_sorted = []
    for s in sinks:
        before = sources[sources < s]
        src_sorted.append(before.max() if before.size else sources.max())
    sources = np.array(src_sorted)
    sink_slopes = np.array([float(field.d_omega(z)) for z in sinks])
    source_slopes = np.array([float(field.d_omega(z)) for z in sources])

    psi_s = np.array([float(field.psi(z)) for z in sinks])
    psi_used = bool(np.all(psi_s < 0))
    rho_r = -1.0 / psi_s.max() if psi_used else float("nan")

    r_minus = 0.5
    W_minus = []
    for z, sl in zip(sinks, sink_slopes):
        if psi_used:
            ok = lambda t, sl=sl: (field.d_omega(t) < sl / 2) & (rho_r * field.psi(t) < -0.75)
        else:
            ok = lambda t, sl=sl: field.d_omega(t) < sl / 2
        r_minus = min(r_minus, _largest_radius(z, ok))
        W_minus.append(_component(z, ok))
    r_plus = 0.5
    W_plus = []
    for z, sl in zip(sources, source_slopes):
        ok = lambda t, sl=sl: field.d_omega(t) > sl / 2
        r_plus = min(r_plus, _largest_radius(z, ok))
        W_plus.append(_component(z, ok))
    if theta_cap is not None:
        r_minus = min(r_minus, float(theta_cap))
    return ZeroClassification(zeros, slopes, sinks, sources, sink_slopes, source_slopes,
                              float(r_minus), float(r_plus), W_minus, W_plus, psi_used,
                              float(rho_r))


def normalize_A2(sys, field, classification):
    """Rescale omega so that the largest ``psi_bar`` at the sinks equals -1.

    Returns
    -------
    rho_r : float
        ``-1 / max_k psi_bar(sink_k)``.  Replacing ``omega`` by
        ``rho_r * omega`` and ``eps`` by ``eps / rho_r`` leaves the map
        unchanged.
    normalized : AveragedField
        Field with ``omega_bar`` and ``psi_bar`` scaled by ``rho_r`` and
        ``sigma2`` by ``rho_r**2``; ``provenance['epsilon']`` holds the
        rescaled epsilon.

    Raises
    ------
    AssumptionViolation
        Tag 'A2' when some ``psi_bar(sink_k) >= 0``; ``detail`` names the
        offending sink and value.
    """
    vals = np.array([float(field.psi(z)) for z in classification.sinks])
    k = int(np.argmax(vals))
    if vals[k] >= 0:
        raise AssumptionViolation(
            "A2", f"psi_bar(sink)={vals[k]:.6g} >= 0 at theta={classification.sinks[k]:.6g}",
            {"sink": float(classification.sinks[k]), "psi_bar": float(vals[k]),
             "all": vals.tolist()})
    rho_r = -1.0 / vals[k]
    prov = dict(field.provenance)
    eps = prov.get("epsilon", getattr(sys, "epsilon", float("nan")))
    prov["epsilon"] = eps / rho_r
    prov["epsilon_original"] = eps
    normalized = AveragedField(field.theta, rho_r * field.omega_bar, rho_r * field.psi_bar,
                               rho_r ** 2 * field.sigma2, field.gk_certificate,
                               field.scale * rho_r, prov)
    return rho_r, normalized


def integrate_averaged(field, theta0, T, h=1e-3):
    """RK4 solution of ``theta' = omega_bar(theta)``, ``zeta' = psi_bar(theta)``.

    Returns
    -------
    t, theta, zeta : ndarray
        Samples every ``h`` from 0 to ``T`` (theta is lifted, not reduced).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    n = int(round(T / h))
    t = np.arange(n + 1) * h
    th = np.empty(n + 1)
    ze = np.empty(n + 1)
    th[0] = theta0
    ze[0] = 0.0
    om = field.omega
    ps = field.psi
    y = float(theta0)
    z = 0.0
    for i in range(n):
        k1 = float(om(y))
        k2 = float(om(y + 0.5 * h * k1))
        k3 = float(om(y + 0.5 * h * k2))
        k4 = float(om(y + h * k3))
        q1, q2, q3, q4 = float(ps(y)), float(ps(y + 0.5 * h * k1)), float(ps(y + 0.5 * h * k2)), float(ps(y + h * k3))
        y += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        z += h * (q1 + 2 * q2 + 2 * q3 + q4) / 6
        th[i + 1] = y
        ze[i + 1] = z
    return t, th, ze
