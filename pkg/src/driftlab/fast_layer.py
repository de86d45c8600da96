"""Transfer-operator computations on a single fiber ``f_theta``.

The fiber maps are smooth expanding circle maps.  Their transfer operator
is discretized with Ulam's method on ``N`` equal bins: entry ``P[i, j]`` is
the fraction of bin ``j`` that ``f_theta`` sends into bin ``i``.  The
fractions are computed exactly (up to the inverse-branch tolerance) by
locating the preimages of all bin edges.
"""

from dataclasses import dataclass
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy import sparse

from . import _kernels as K

__all__ = [
    "DensityGrid",
    "UlamOperator",
    "NonConvergenceError",
    "ulam_operator",
    "invariant_density",
    "averaged_drift",
    "green_kubo_variance",
    "GreenKubo",
    "periodic_orbit_averages",
    "bin_average",
    "fiber_table_csv",
]

# Gauss-Legendre nodes used for bin averages of smooth integrands.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS

INVERSE_TOL = 1e-13


class NonConvergenceError(RuntimeError):
    """Raised when power iteration misses its residual target."""


@dataclass(frozen=True)
class UlamOperator:
    """Column-stochastic Ulam matrix of one fiber.

    Attributes
    ----------
    N : int
        Number of bins.
    theta : float
    matrix : scipy.sparse.csr_matrix
        ``matrix[i, j]`` is the share of bin ``j`` mapped into bin ``i``.
    """

    N: int
    theta: float
    matrix: sparse.csr_matrix

    def apply(self, v):
        """Push a vector of bin densities forward once."""
        return self.matrix @ v


@dataclass(frozen=True)
class DensityGrid:
    """Piecewise-constant density on ``N`` equal bins of the circle.

    ``values`` are densities, so ``values.mean() == 1``.
    """

    theta: float
    values: np.ndarray
    residual: float
    iterations: int

    @property
    def resolution(self):
        return self.values.size

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.values.size + 1)


def _check_resolution(N):
    if N < 256 or N & (N - 1):
        raise ValueError("resolution must be a power of two >= 256")


def ulam_operator(sys, theta, N):
    """Ulam discretization of the transfer operator of ``f_theta``.

    Parameters
    ----------
    sys : SystemSpec
    theta : float
    N : int
        Number of bins, a power of two of at least 256.

    Returns
    -------
    UlamOperator
    """
    _check_resolution(N)
    theta = float(theta) % 1.0
    if sys.is_skew:
        # the fiber does not depend on theta
        return _ulam_cached(sys.fam, sys.prm.tobytes(), sys.cb.tobytes(), sys.ch.shape,
                            sys.ch.tobytes(), 0.0, N)
    return _build_ulam(sys.kernel_args, theta, N)


@lru_cache(maxsize=16)
def _ulam_cached(fam, prm_b, cb_b, ch_shape, ch_b, theta, N):
    prm = np.frombuffer(prm_b)
    cb = np.frombuffer(cb_b).reshape(-1, 2) if cb_b else np.zeros((0, 2))
    ch = np.frombuffer(ch_b).reshape(ch_shape)
    return _build_ulam((fam, prm, cb, ch), theta, N)


def _build_ulam(kargs, theta, N):
    fam, prm, cb, ch = kargs
    f0 = K.fields(fam, prm, cb, ch, 0.0, theta)[0]
    f1 = K.fields(fam, prm, cb, ch, 1.0, theta)[0]
    lo = math.ceil(f0 * N)
    hi = math.floor(f1 * N)
    targets = np.arange(lo, hi + 1, dtype=float) / N
    pre = K.fiber_preimages(fam, prm, cb, ch, theta, targets, INVERSE_TOL)
    grid = np.arange(N + 1, dtype=float) / N
    pts = np.unique(np.concatenate([grid, pre[(pre > 0.0) & (pre < 1.0)]]))
    lengths = np.diff(pts)
    keep = lengths > 0
    mids = 0.5 * (pts[:-1] + pts[1:])[keep]
    lengths = lengths[keep]
    src = np.minimum((mids * N).astype(np.int64), N - 1)
    img = K.fields_array(fam, prm, cb, ch, mids, np.full(mids.size, theta))[0]
    dst = np.floor(img * N).astype(np.int64) % N
    mat = sparse.coo_matrix((lengths * N, (dst, src)), shape=(N, N)).tocsr()
    mat.sum_duplicates()
    # remove round-off so that every column sums to one
    colsum = np.asarray(mat.sum(axis=0)).ravel()
    mat = mat @ sparse.diags(1.0 / colsum)
    return UlamOperator(N, theta, sparse.csr_matrix(mat))


def invariant_density(sys, theta, N=4096, tol=1e-10, max_iter=10_000, operator=None):
    """Leading fixed vector of the Ulam operator of ``f_theta``.

    Power iteration started from the uniform density, stopped once the L1
    residual ``||P rho - rho||`` (with respect to Lebesgue measure) is below
    ``tol``.

    Raises
    ------
    NonConvergenceError
        If the residual target is not reached in ``max_iter`` iterations.
    """
    U = operator if operator is not None else ulam_operator(sys, theta, N)
    N = U.N
    rho = np.ones(N)
    res = np.inf
    for it in range(1, max_iter + 1):
        new = U.apply(rho)
        new *= N / new.sum()
        res = np.abs(new - rho).mean()
        rho = new
        if res <= tol:
            break
    else:
        raise NonConvergenceError(f"power iteration residual {res:.3e} after {max_iter} steps")
    return DensityGrid(float(theta) % 1.0, rho, float(res), it)


def bin_average(func, N):
    """Average of ``func`` over each of ``N`` equal bins (4-point Gauss rule)."""
    x = (np.arange(N)[:, None] + _GL_NODES[None, :]) / N
    return func(x) @ _GL_WEIGHTS


def averaged_drift(sys, theta, N=4096, density=None):
    """``int omega(x, theta) rho_theta(x) dx`` on the Ulam grid."""
    rho = density if density is not None else invariant_density(sys, theta, N)
    w = bin_average(lambda x: sys.omega(x, theta), rho.resolution)
    return float(np.mean(w * rho.values))


@dataclass(frozen=True)
class GreenKubo:
    """Truncated Green-Kubo sum with its truncation certificate."""

    value: float
    terms: np.ndarray
    last_term: float

    def __float__(self):
        return self.value


def green_kubo_variance(sys, theta, N=4096, M=40, stop=1e-12, density=None, operator=None):
    """Green-Kubo variance of ``omega(., theta)`` under ``f_theta``.

    The correlations ``int hat * L^m(hat rho)`` are obtained by pushing
    ``hat * rho`` through the Ulam operator.  Summation stops after ``M``
    terms or once a term falls below ``stop`` in absolute value.

    Returns
    -------
    GreenKubo
        ``value``, all computed terms, and the last term magnitude.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    U = operator if operator is not None else ulam_operator(sys, theta, N)
    rho = density if density is not None else invariant_density(sys, theta, U.N, operator=U)
    N = U.N
    r = rho.values
    w = bin_average(lambda x: sys.omega(x, theta), N)
    wbar = float(np.mean(w * r))
    w2 = bin_average(lambda x: (sys.omega(x, theta) - wbar) ** 2, N)
    hat = w - wbar
    terms = [float(np.mean(w2 * r))]
    g = hat * r
    for m in range(1, M + 1):
        g = U.apply(g)
        terms.append(2.0 * float(np.mean(hat * g)))
        if abs(terms[-1]) < stop:
            break
    terms = np.array(terms)
    tail = np.abs(terms[1:])
    if tail.size >= 6 and tail[-1] > stop:
        ratios = tail[-3:] / np.maximum(tail[-4:-1], 1e-300)
        if np.any(ratios > 0.99):
            warnings.warn("Green-Kubo terms are not decaying geometrically", RuntimeWarning)
    return GreenKubo(float(terms.sum()), terms, float(abs(terms[-1])) if terms.size > 1 else 0.0)


def periodic_orbit_averages(sys, theta, max_period, max_points=2 ** 16):
    """Orbit averages of ``omega(., theta)`` over periodic orbits of ``f_theta``.

    Parameters
    ----------
    sys : SystemSpec
    theta : float
    max_period : int
        Largest period enumerated.  Periods whose point count
        ``degree**p - 1`` exceeds ``max_points`` are skipped with a warning.

    Returns
    -------
    list of (int, float)
        One ``(period, average)`` record per primitive orbit.
    """
    if max_period > 16:
        raise ValueError("max_period must be at most 16")
    out = []
    d = sys.degree
    for p in range(1, max_period + 1):
        if d ** p - 1 > max_points:
            warnings.warn(f"period {p} skipped: {d ** p - 1} points exceed the budget",
                          RuntimeWarning)
            break
        pts = K.periodic_points(*sys.kernel_args, float(theta), p, float(d), 1e-14)
        pts = np.sort(pts)
        minper, leader, avg = K.orbit_records(*sys.kernel_args, float(theta), pts, p, 1e-9)
        bad = minper == 0
        if bad.any():
            warnings.warn(f"{int(bad.sum())} period-{p} points failed to close", RuntimeWarning)
        sel = leader & (minper == p)
        out.extend((p, float(a)) for a in avg[sel])
    return out


def fiber_table_csv(path, thetas, omega_bar, psi_bar, sigma2, N, M):
    """Write the fiber table with a header row naming the settings."""
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(f"# resolution={N} truncation={M}\r\n")
        w = csv.writer(fh)
        w.writerow(["theta", "omega_bar", "psi_bar", "sigma2"])
        for row in zip(thetas, omega_bar, psi_bar, sigma2):
            w.writerow([repr(float(v)) for v in row])
