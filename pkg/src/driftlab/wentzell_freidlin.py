"""The diffusion ``dw = omega_bar(w) dt + sqrt(eps) sigma(w) dB`` on the circle.

Its generator ``L = omega_bar d + (eps/2) sigma^2 d^2`` can be written as
``(eps / 2 rho) d(sigma^2 rho d)`` with the explicit invariant density
``rho(theta) ~ sigma^-2 exp((2/eps) int_0^theta omega_bar / sigma^2)``.
The discretization below keeps that structure, so the discrete generator is
exactly reversible with respect to the sampled density.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import linalg

from . import _kernels as K

__all__ = [
    "WFModel",
    "GeneratorMatrix",
    "model_from_field",
    "model_from_functions",
    "stationary_density",
    "generator_matrix",
    "spectral_gap",
    "simulate_sde",
    "sde_occupation",
    "compare_invariant_measures",
]


@dataclass(frozen=True, eq=False)
class WFModel:
    """Drift and variance tables on the grid ``k / M``.

    Attributes
    ----------
    theta : ndarray
    drift : ndarray
        ``omega_bar`` at the grid points.
    sigma2 : ndarray
        ``sigma^2`` at the grid points (strictly positive).
    epsilon : float
    """

    theta: np.ndarray
    drift: np.ndarray
    sigma2: np.ndarray
    epsilon: float

    def __post_init__(self):
        if np.any(self.sigma2 <= 0):
            raise ValueError("sigma^2 must be positive everywhere")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def M(self):
        return self.theta.size

    def with_epsilon(self, epsilon):
        return WFModel(self.theta, self.drift, self.sigma2, float(epsilon))

    def _interp(self, values, th):
        th = np.asarray(th, float) % 1.0
        return np.interp(th, np.append(self.theta, 1.0), np.append(values, values[0]))


def model_from_field(field, epsilon, M=None):
    """Model built from an :class:`AveragedField` (resampled to ``M`` points)."""
    if M is None:
        return WFModel(field.theta.copy(), field.omega_bar.copy(), field.sigma2.copy(),
                       float(epsilon))
    th = np.arange(M) / M
    return WFModel(th, np.asarray(field.omega(th), float), np.asarray(field.var(th), float),
                   float(epsilon))


def model_from_functions(drift, sigma2, epsilon, M=1024):
    """Model from callables ``drift(theta)`` and ``sigma2(theta)``."""
    th = np.arange(M) / M
    d = np.asarray(drift(th), float) * np.ones(M)
    s = np.asarray(sigma2(th), float) * np.ones(M)
    return WFModel(th, d, s, float(epsilon))


def _spectral_antiderivative(values, at):
    """Antiderivative from 0 of a periodic zero-mean sample, evaluated at ``at``."""
    M = values.size
    c = np.fft.rfft(values) / M
    at = np.asarray(at, float)
    out = np.zeros_like(at)
    for j in range(1, c.size):
        w = 1.0 if (M % 2 or j < M // 2) else 0.5
        a = 2 * w * c[j]
        # integral of Re(a e^{2 pi i j t}) from 0 to at
        out += np.real(a * (np.exp(2j * np.pi * j * at) - 1.0) / (2j * np.pi * j))
    return out


def _log_density(model, at):
    g = model.drift / model.sigma2
    mean = float(g.mean())
    if abs(mean) > 1e-8:
        raise ValueError(f"int omega_bar / sigma^2 = {mean:.3e} is not zero; "
                         "the closed-form density is not periodic")
    s2 = model._interp(model.sigma2, at)
    return (2.0 / model.epsilon) * _spectral_antiderivative(g - mean, at) - np.log(s2)


def stationary_density(model, grid=None):
    """Closed-form invariant density, normalized on the grid.

    Parameters
    ----------
    model : WFModel
    grid : ndarray, optional
        Evaluation points (default: the model grid).

    Returns
    -------
    ndarray
        Density values with mean 1 on a uniform grid.

    Raises
    ------
    ValueError
        If ``int omega_bar / sigma^2 != 0`` (within 1e-8).
    """
    at = model.theta if grid is None else np.asarray(grid, float)
    lg = _log_density(model, at)
    r = np.exp(lg - lg.max())
    return r / r.mean()


@dataclass(frozen=True)
class GeneratorMatrix:
    """Periodic three-point discretization of ``-L``.

    ``matrix[i, j]`` is the coefficient of ``phi_j`` in ``-(L phi)_i``.
    ``weights`` is the closed-form density at the nodes; ``diag(weights)
    @ matrix`` is exactly symmetric.
    """

    theta: np.ndarray
    matrix: np.ndarray
    weights: np.ndarray
    epsilon: float

    def symmetric_form(self):
        """``W^{1/2} A W^{-1/2}``, symmetric and similar to ``matrix``."""
        s = np.sqrt(self.weights)
        S = (s[:, None] * self.matrix) / s[None, :]
        return 0.5 * (S + S.T)

    def stationary_vector(self):
        """Normalized null vector of ``matrix^T`` (dense solve)."""
        A = self.matrix.T.copy()
        n = A.shape[0]
        A[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = n
        return linalg.solve(A, rhs)


def generator_matrix(model, grid=None):
    """Flux-form discretization of ``-(eps / 2 rho)(sigma^2 rho phi')'``.

    Fluxes use ``sigma^2 rho`` at the cell midpoints, evaluated from the
    closed form.
    """
    M = model.M if grid is None else int(grid)
    th = np.arange(M) / M
    h = 1.0 / M
    mid = th + 0.5 * h
    lr_nodes = _log_density(model, th)
    lr_mid = _log_density(model, mid)
    ref = max(lr_nodes.max(), lr_mid.max())
    rho = np.exp(lr_nodes - ref)
    a = model._interp(model.sigma2, mid) * np.exp(lr_mid - ref)   # a_{i+1/2}
    am = np.roll(a, 1)                                           # a_{i-1/2}
    c = model.epsilon / (2 * h * h)
    A = np.zeros((M, M))
    idx = np.arange(M)
    A[idx, idx] = c * (a + am) / rho
    A[idx, (idx + 1) % M] -= c * a / rho
    A[idx, (idx - 1) % M] -= c * am / rho
    w = rho / rho.mean()
    return GeneratorMatrix(th, A, w, model.epsilon)


def spectral_gap(model, grid=1024, k=4, check=True):
    """Second-smallest eigenvalue of the discrete ``-L``.

    Parameters
    ----------
    grid : int
        At least 1024.
    k : int
        Number of low eigenvalues computed by the eigensolver.
    check : bool
        Recompute on a doubled grid and warn if the gap moves by more
        than 5%.
    """
    if grid < 1024:
        raise ValueError("grid must be at least 1024")
    G = generator_matrix(model, grid)
    ev = linalg.eigvalsh(G.symmetric_form(), subset_by_index=[0, k - 1])
    gap = float(ev[1])
    if check:
        G2 = generator_matrix(model, 2 * grid)
        ev2 = linalg.eigvalsh(G2.symmetric_form(), subset_by_index=[0, 1])
        if abs(ev2[1] - gap) > 0.05 * abs(gap):
            warnings.warn(f"spectral gap changes by more than 5% under grid doubling "
                          f"({gap:.4g} vs {ev2[1]:.4g})", RuntimeWarning)
    return gap


def simulate_sde(model, theta0, T, dt=1e-3, seed=0, stride=1):
    """Euler-Maruyama paths on the circle.

    Parameters
    ----------
    theta0 : float or array_like
        One start per path.
    T : float
        Final time.
    dt : float
        Step, at most 1e-3.
    stride : int
        Record every ``stride`` steps.

    Returns
    -------
    t : ndarray
    paths : ndarray, shape ``(len(t), paths)``
        Lifted positions.
    """
    if dt > 1e-3:
        raise ValueError("dt must be at most 1e-3")
    th0 = np.atleast_1d(np.asarray(theta0, float))
    n = int(round(T / dt))
    if n % stride:
        raise ValueError("stride must divide the number of steps")
    sig = np.sqrt(model.sigma2)
    pid = np.arange(th0.size, dtype=np.int64)
    out = K.euler_maruyama(np.ascontiguousarray(model.drift), np.ascontiguousarray(sig),
                           float(model.epsilon), th0, n, float(dt), np.uint64(seed), pid,
                           int(stride))
    t = dt * stride * np.arange(out.shape[0])
    return t, out


def sde_occupation(model, paths_n, T, burn, dt=1e-3, seed=0, bins=256, sample_every=10):
    """Occupation density of ``paths_n`` paths started uniformly, after ``burn`` time."""
    rng = np.random.default_rng(seed)
    th0 = rng.random(paths_n)
    t, paths = simulate_sde(model, th0, T, dt, seed, sample_every)
    keep = paths[t >= burn] % 1.0
    h, _ = np.histogram(keep.ravel(), bins=bins, range=(0.0, 1.0))
    return h / h.sum() * bins


def compare_invariant_measures(hist, model, mass_tol=0.1):
    """Compare a map histogram with the diffusion's invariant density.

    Returns a dict with the L1 distance of the theta-marginals, per-sink
    ratios of peak position offset and variance, per-basin masses of both
    measures and a ``qualitative_mismatch`` flag raised when the masses
    differ by more than ``mass_tol``.
    """
    nbt = hist.theta_density.size
    centers = hist.theta_centers
    # bin averages of the closed-form density (4 points per bin)
    sub = (np.arange(nbt)[:, None] + (np.arange(4) + 0.5)[None, :] / 4) / nbt
    rho = stationary_density(model, sub.ravel()).reshape(nbt, 4).mean(axis=1)
    rho = rho / rho.mean()
    l1 = float(np.abs(hist.theta_density - rho).mean())
    noise = float(hist.bootstrap_sigma)
    peaks = []
    masses_model = []
    for k, z in enumerate(hist.sinks):
        fit = hist.fits[k]
        d = (centers - z + 0.5) % 1.0 - 0.5
        half = 0.5 * min(np.min(np.abs(((hist.sinks - z + 0.5) % 1.0 - 0.5)[
            np.abs((hist.sinks - z + 0.5) % 1.0 - 0.5) > 0]), initial=1.0), 0.25)
        sel = np.abs(d) < half
        w = rho[sel]
        mm = float(np.sum(w * d[sel]) / w.sum())
        vm = float(np.sum(w * (d[sel] - mm) ** 2) / w.sum())
        peaks.append({
            "sink": float(z),
            "map_center": fit["center"],
            "model_center": float((z + mm) % 1.0),
            "variance_ratio": fit["variance"] / vm if vm > 0 else float("nan"),
        })
    # basin masses of the model, using the basins of the histogram
    mass_map = np.asarray(hist.masses, float)
    if hist.basin is not None and mass_map.size > 1:
        masses_model = np.array([rho[hist.basin == k].sum() / rho.sum()
                                 for k in range(mass_map.size)])
        mismatch = bool(np.max(np.abs(masses_model - mass_map)) > mass_tol)
    else:
        masses_model = np.ones(mass_map.size)
        mismatch = False
    return {
        "l1_theta_marginal": l1,
        "l1_noise_sigma": noise,
        "peaks": peaks,
        "masses_map": list(map(float, hist.masses)),
        "masses_model": list(map(float, masses_model)),
        "qualitative_mismatch": mismatch,
    }
