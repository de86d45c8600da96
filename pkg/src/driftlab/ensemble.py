"""Standard pairs, particle ensembles and their evolution.

A standard pair is a mildly sloped curve ``x -> (x, G(x))`` over a short
interval ``[a, b]`` carrying a smooth probability density ``rho``.  Both
``G`` and ``rho`` are stored as Chebyshev series on ``[a, b]`` so that their
derivatives are exact.

Ensembles are plain particle arrays.  Each particle owns a counter-based
random stream keyed by the ensemble seed and its index, so results do not
depend on how the work is split between threads.
"""

from dataclasses import dataclass, field, replace
import csv
import math
import struct

import numpy as np
from numpy.polynomial import chebyshev as C

from . import _kernels as K
from .center_geometry import cone_constants

__all__ = [
    "PairConstants",
    "StandardPairSpec",
    "Ensemble",
    "TrajectoryTrace",
    "default_constants",
    "flat_pair",
    "pair_from_functions",
    "sample_standard_pair",
    "pair_cdf",
    "pair_quantile",
    "uniform_ensemble",
    "evolve",
    "write_trace_csv",
    "write_binary",
    "read_binary",
]

CHEB_DEGREE = 32
_BIN_MAGIC = b"DLENS001"


@dataclass(frozen=True)
class PairConstants:
    """Constants of the standard-pair class.

    ``|G'| <= eps c1``, ``|G''| <= eps D0 c1``, ``|G'''| <= eps D1 c1``,
    ``|rho'/rho| <= c2``, ``|rho''/rho| <= D0bar c2`` and
    ``b - a`` in ``[delta / 2, delta]``.
    """

    delta: float
    c1: float
    c2: float
    D0: float
    D1: float
    D0bar: float


def _fiber_derivative_norms(sys, grid=256):
    """Sup norms of ``f_xx, f_xxx`` and ``omega_xx, omega_xxx`` by differencing."""
    h = 1e-3
    g = (np.arange(grid) + 0.5) / grid
    X, T = np.meshgrid(g, g)
    fx = [sys.df_dx(X + k * h, T) for k in (-1, 0, 1)]
    wx = [sys.domega_dx(X + k * h, T) for k in (-1, 0, 1)]
    fxx = np.abs(fx[2] - fx[0]).max() / (2 * h)
    fxxx = np.abs(fx[2] - 2 * fx[1] + fx[0]).max() / h ** 2
    wxx = np.abs(wx[2] - wx[0]).max() / (2 * h)
    wxxx = np.abs(wx[2] - 2 * wx[1] + wx[0]).max() / h ** 2
    return float(fxx), float(fxxx), float(wxx), float(wxxx)


def default_constants(sys, c2=10.0):
    """Pair constants that are invariant under the pushforward, with slack 2.

    ``c1 = 4 |d omega|`` and ``delta`` is the largest power of two with
    ``delta c2 < 1/50``.  The second and third derivative factors are the
    fixed points of the one-step child bounds (distortion terms of the
    fiber map divided by ``lambda**k``), doubled.
    """
    nrm = sys.norms
    dw = nrm["domega_dx"] + nrm["domega_dtheta"]
    c1 = 4.0 * max(dw, 1e-12)
    lam = sys.lam
    fxx, fxxx, wxx, wxxx = _fiber_derivative_norms(sys)
    k2 = fxx / lam ** 2
    k3 = fxxx / lam ** 3
    D0 = 2.0 * max(1.0, (wxx / c1 + k2) / (1 - lam ** -2))
    D1 = 2.0 * max(1.0, (wxxx / c1 + 3 * D0 * k2 + k3) / (1 - lam ** -3))
    D0bar = 2.0 * max(1.0, (3 * c2 * k2 + k3) / (c2 * (1 - lam ** -2)))
    delta = 2.0 ** math.floor(math.log2(1.0 / (50.0 * c2)))
    if delta * c2 >= 1 / 50:
        delta /= 2
    return PairConstants(delta, c1, c2, D0, D1, D0bar)


@dataclass(frozen=True, eq=False)
class StandardPairSpec:
    """A standard pair ``(G, rho)`` over ``[a, b]``.

    Attributes
    ----------
    a, b : float
    G : ndarray
        Chebyshev coefficients of the curve on ``[a, b]``.
    rho : ndarray
        Chebyshev coefficients of the density on ``[a, b]`` (integral 1).
    epsilon : float
    constants : PairConstants
    """

    a: float
    b: float
    G: np.ndarray
    rho: np.ndarray
    epsilon: float
    constants: PairConstants

    @property
    def length(self):
        return self.b - self.a

    def _t(self, x):
        return (2.0 * np.asarray(x, float) - (self.a + self.b)) / (self.b - self.a)

    def _deriv(self, coef, k):
        out = coef
        for _ in range(k):
            out = C.chebder(out) * (2.0 / (self.b - self.a))
        return out

    def curve(self, x, k=0):
        """``G^{(k)}(x)``."""
        return C.chebval(self._t(x), self._deriv(self.G, k))

    def density(self, x, k=0):
        """``rho^{(k)}(x)``."""
        return C.chebval(self._t(x), self._deriv(self.rho, k))

    def mean_theta(self, nodes=64):
        """``mu_l(theta) = int G rho`` by Gauss-Legendre quadrature."""
        t, w = np.polynomial.legendre.leggauss(nodes)
        x = 0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * t
        return float(0.5 * (self.b - self.a) * np.sum(w * self.curve(x) * self.density(x)))

    def bound_ratios(self, samples=1000):
        """Measured quantity over its allowed bound, for every constraint."""
        x = np.linspace(self.a, self.b, samples)
        c = self.constants
        e = self.epsilon
        r = self.density(x)
        mass = C.chebint(self.rho)
        total = (C.chebval(1.0, mass) - C.chebval(-1.0, mass)) * 0.5 * (self.b - self.a)
        scale = max(e * c.c1, 1e-300)
        return {
            "length": self.length / c.delta,
            "length_lower": (c.delta / 2) / self.length,
            "G1": np.abs(self.curve(x, 1)).max() / scale,
            "G2": np.abs(self.curve(x, 2)).max() / (scale * c.D0),
            "G3": np.abs(self.curve(x, 3)).max() / (scale * c.D1),
            "rho1": np.abs(self.density(x, 1) / r).max() / c.c2,
            "rho2": np.abs(self.density(x, 2) / r).max() / (c.c2 * c.D0bar),
            "mass": abs(total - 1.0) / 1e-10,
            "positivity": 0.0 if r.min() > 0 else 2.0,
        }

    def validate(self, samples=1000, short=False):
        """Raise ``ValueError`` naming the first violated bound."""
        for key, val in self.bound_ratios(samples).items():
            if short and key == "length_lower":
                continue
            if val > 1.0 + 1e-9:
                raise ValueError(f"standard pair bound {key} violated (ratio {val:.4g})")
        return self


def _cheb_fit(func, a, b, degree=CHEB_DEGREE):
    t = np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1))
    x = 0.5 * (a + b) + 0.5 * (b - a) * t
    coef = C.chebfit(t, np.asarray(func(x), float) * np.ones_like(x), degree)
    coef[np.abs(coef) < 1e-15 * max(1.0, np.abs(coef).max())] = 0.0
    return coef


def pair_from_functions(a, b, G, rho, epsilon, constants, validate=True, short=False):
    """Fit ``G`` and ``rho`` by Chebyshev interpolation and normalize ``rho``."""
    if not b > a:
        raise ValueError("need b > a")
    g = _cheb_fit(G, a, b)
    r = _cheb_fit(rho, a, b)
    mass = C.chebint(r)
    total = (C.chebval(1.0, mass) - C.chebval(-1.0, mass)) * 0.5 * (b - a)
    r = r / total
    spec = StandardPairSpec(float(a), float(b), g, r, float(epsilon), constants)
    return spec.validate(short=short) if validate else spec


def flat_pair(sys, a, theta0, length=None, constants=None):
    """Horizontal pair ``G = theta0`` with uniform density."""
    c = constants or default_constants(sys)
    length = c.delta if length is None else length
    b = a + length
    return pair_from_functions(a, b, lambda x: theta0 + 0 * x, lambda x: 1.0 + 0 * x,
                               sys.epsilon, c)


@dataclass
class Ensemble:
    """Particles ``(x, theta)`` with weights and center sums ``zeta``.

    ``theta`` is stored reduced; ``winding`` counts the turns so that the
    lifted slow coordinate is ``theta + winding``.  ``pid`` indexes the
    random stream of each particle.
    """

    x: np.ndarray
    theta: np.ndarray
    winding: np.ndarray
    weight: np.ndarray
    zeta: np.ndarray
    pid: np.ndarray
    seed: int
    n: int = 0
    origin: object = None

    @property
    def size(self):
        return self.x.size

    @property
    def lifted(self):
        return self.theta + self.winding

    def copy(self):
        return Ensemble(self.x.copy(), self.theta.copy(), self.winding.copy(), self.weight.copy(),
                        self.zeta.copy(), self.pid.copy(), self.seed, self.n, self.origin)

    def subset(self, mask):
        m = np.asarray(mask)
        w = self.weight[m]
        return Ensemble(self.x[m].copy(), self.theta[m].copy(), self.winding[m].copy(),
                        w / w.sum(), self.zeta[m].copy(), self.pid[m].copy(), self.seed, self.n,
                        self.origin)


def _make(x, theta, seed, origin=None):
    x = np.ascontiguousarray(x, float) % 1.0
    theta = np.ascontiguousarray(theta, float)
    wind = np.floor(theta)
    n = x.size
    return Ensemble(x, theta - wind, wind, np.full(n, 1.0 / n), np.zeros(n),
                    np.arange(n, dtype=np.int64), int(seed), 0, origin)


def pair_cdf(spec, x):
    """``int_a^x rho`` for points of ``[a, b]``."""
    prim = C.chebint(spec.rho)
    return (C.chebval(spec._t(x), prim) - C.chebval(-1.0, prim)) * 0.5 * (spec.b - spec.a)


def pair_quantile(spec, u):
    """Inverse of :func:`pair_cdf` (bisection, then a Newton polish)."""
    u = np.atleast_1d(np.asarray(u, float))
    a, b = spec.a, spec.b
    half = 0.5 * (b - a)
    prim = C.chebint(spec.rho)
    base = C.chebval(-1.0, prim)

    def cdf(t):
        return (C.chebval(t, prim) - base) * half

    lo = np.full(u.size, -1.0)
    hi = np.full(u.size, 1.0)
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    t = 0.5 * (lo + hi)
    for _ in range(3):
        dens = C.chebval(t, spec.rho) * half
        t = np.clip(t - (cdf(t) - u) / dens, -1.0, 1.0)
    return 0.5 * (a + b) + half * t


def sample_standard_pair(spec, count, seed):
    """Draw ``count`` equal-weight particles from ``mu_l``.

    ``x`` is obtained by inverting the cumulative distribution of ``rho``
    at uniform variates; ``theta = G(x)``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    x = pair_quantile(spec, rng.random(count))
    return _make(x, spec.curve(x), seed, spec)


def uniform_ensemble(count, seed, theta_range=(0.0, 1.0)):
    """Particles uniform on ``[0,1) x theta_range`` (Lebesgue initial data)."""
    rng = np.random.default_rng(seed)
    x = rng.random(count)
    t0, t1 = theta_range
    theta = t0 + (t1 - t0) * rng.random(count)
    return _make(x, theta, seed, "uniform")


@dataclass
class TrajectoryTrace:
    """Slow-time samples of an evolved ensemble.

    ``theta`` and ``zeta`` have shape ``(samples, particles)``; ``theta``
    is lifted.  ``theta_bar`` and ``zeta_bar`` follow the averaged
    dynamics from the initial ensemble mean; ``dtheta`` and ``dzeta`` are
    the deviations from it.
    """

    t: np.ndarray
    steps: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray
    theta_bar: np.ndarray = None
    zeta_bar: np.ndarray = None

    @property
    def dtheta(self):
        if self.theta_bar is None:
            return self.theta - self.theta[0]
        return self.theta - self.theta_bar[:, None]

    @property
    def dzeta(self):
        if self.zeta_bar is None:
            return self.zeta - self.zeta[0]
        return self.zeta - self.zeta_bar[:, None]

    def quantile_rows(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)):
        dt = self.dtheta
        dz = self.dzeta
        for r in range(self.t.size):
            yield ((float(self.t[r]), int(self.steps[r]))
                   + tuple(float(v) for v in np.quantile(dt[r], qs))
                   + tuple(float(v) for v in np.quantile(dz[r], qs)))


def _reference(field, theta0, t):
    """Averaged solution sampled at the times ``t`` (RK4 with step <= 1e-3)."""
    from .averaged_dynamics import integrate_averaged

    if t[-1] <= 0:
        return np.full(t.size, theta0), np.zeros(t.size)
    dt = t[1] - t[0] if t.size > 1 else t[-1]
    m = max(1, math.ceil(dt / 1e-3 - 1e-9))
    h = dt / m
    _, th, ze = integrate_averaged(field, theta0, t[-1], h)
    idx = np.rint(t / h).astype(int)
    return th[idx], ze[idx]


def evolve(sys, ens, n, stride=None, field=None, cones=None, jitter=True):
    """Advance every particle ``n`` steps.

    Parameters
    ----------
    sys : SystemSpec
    ens : Ensemble
        Left untouched; the evolved copy is returned.
    n : int
        Number of steps, at least 1.
    stride : int, optional
        Record every ``stride`` steps (default ``n``: initial and final only).
    field : AveragedField, optional
        When given, the averaged reference started at the initial mean of
        theta is attached to the trace.  Slow time is ``k * eps / scale``
        so normalized fields are handled consistently.
    cones : ConeConstants, optional
        Supplies the regularization depth for ``psi``.
    jitter : bool
        Refresh the low-order bits of ``x`` every step (see
        ``system_model.jitter_stream``).

    Returns
    -------
    (Ensemble, TrajectoryTrace)
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    stride = n if stride is None else int(stride)
    if stride < 1 or n % stride:
        raise ValueError("stride must divide n")
    if cones is None:
        nbar = cone_constants(sys).n_bar if sys.epsilon > 0 else 1
    else:
        nbar = cones.n_bar
    out = ens.copy()
    rows = n // stride + 1
    rec_t = np.empty((rows, out.size))
    rec_z = np.empty((rows, out.size))
    K.evolve_particles(*sys.kernel_args, float(sys.epsilon), out.x, out.theta, out.winding,
                       out.zeta, out.pid, np.uint64(out.seed), np.int64(out.n), int(n), stride,
                       int(nbar), K.JITTER_SCALE if jitter else 0.0, rec_t, rec_z)
    steps = out.n + stride * np.arange(rows)
    out.n += n
    scale = field.scale if field is not None else 1.0
    t = (steps - ens.n) * sys.epsilon / scale
    trace = TrajectoryTrace(t, steps, rec_t, rec_z)
    if field is not None:
        th0 = float(np.sum(ens.weight * ens.lifted))
        tb, zb = _reference(field, th0, t)
        trace.theta_bar = tb
        trace.zeta_bar = zb + float(np.sum(ens.weight * ens.zeta))
    return out, trace


def write_trace_csv(path, trace, qs=(0.05, 0.25, 0.5, 0.75, 0.95)):
    """Quantiles of ``dtheta`` and ``dzeta`` per recorded time."""
    head = ["t", "step"] + [f"dtheta_q{q:g}" for q in qs] + [f"dzeta_q{q:g}" for q in qs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for row in trace.quantile_rows(qs):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_binary(path, ens):
    """Dump particles as little-endian float64 columns.

    Layout: 8-byte magic ``DLENS001``, then three little-endian uint64
    values (count, step, seed), then the columns ``x``, ``theta``,
    ``winding``, ``weight``, ``zeta`` and ``pid`` (as float64), each
    ``count`` values long.
    """
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<QQQ", ens.size, ens.n, ens.seed))
        for col in (ens.x, ens.theta, ens.winding, ens.weight, ens.zeta, ens.pid):
            fh.write(np.asarray(col, dtype="<f8").tobytes())


def read_binary(path):
    """Inverse of :func:`write_binary`."""
    with open(path, "rb") as fh:
        if fh.read(8) != _BIN_MAGIC:
            raise ValueError("not an ensemble dump")
        count, step, seed = struct.unpack("<QQQ", fh.read(24))
        cols = np.frombuffer(fh.read(), dtype="<f8").reshape(6, count)
    return Ensemble(cols[0].copy(), cols[1].copy(), cols[2].copy(), cols[3].copy(), cols[4].copy(),
                    cols[5].astype(np.int64), int(seed), int(step))
