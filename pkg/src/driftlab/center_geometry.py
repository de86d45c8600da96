"""Cones, center slopes and the center expansion rate.

Center vectors are written as ``(s, 1)``: ``s`` is the slope of the x
component relative to the theta component.  The n-step slope ``s_n(p)`` is
obtained by seeding the tip ``F^n p`` of the forward orbit and running the
inverse cone map

    Xi_p(s) = ((1 + eps w_t) s - f_t) / (f_x - eps w_x s)

back to ``p``.  The theta component of a center vector grows by the factor
``1 + eps (w_t + w_x s)`` per step, and ``psi = w_t + w_x s_nbar`` is the
regularized rate used for the Birkhoff sums ``zeta_n = eps sum psi``.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import _kernels as K
from .fast_layer import _GL_NODES, _GL_WEIGHTS, invariant_density
from .system_model import TorusPoint

__all__ = [
    "ConeConstants",
    "CenterTrace",
    "cone_constants",
    "slope_field",
    "center_expansion_step",
    "psi",
    "psi_bar",
    "zeta_trace",
    "growth_bound",
    "distortion_profile",
]


@dataclass(frozen=True)
class ConeConstants:
    """Cone apertures and regularization depth.

    Attributes
    ----------
    Ku, Kc : float
        Unstable and center cone apertures, ``2 |w_x|`` and ``2 |f_t|``.
    sigma_c : float
        Grid maximum of ``|dXi/ds|`` over ``|s| <= Kc``.
    n_bar : int
        Smallest depth with ``sigma_c**n_bar * 2 Kc < rho_reg`` (at least 1).
    rho_reg : float
    Gamma : float
        ``|w_t| + Kc |w_x|``, the one-step bound on the log expansion rate.
    """

    Ku: float
    Kc: float
    sigma_c: float
    n_bar: int
    rho_reg: float
    Gamma: float


def cone_constants(sys, rho_reg=1.0 / 16, grid=256, n_slopes=9):
    """Compute :class:`ConeConstants` for a system.

    Raises
    ------
    ValueError
        If ``rho_reg`` is outside (0, 1/8) or the slope map fails to contract.
    """
    if not 0 < rho_reg < 1 / 8:
        raise ValueError("rho_reg must lie in (0, 1/8)")
    nrm = sys.norms
    Ku = 2.0 * nrm["domega_dx"]
    Kc = 2.0 * nrm["df_dtheta"]
    g = (np.arange(grid) + 0.5) / grid
    X, T = np.meshgrid(g, g)
    F = sys._fields(X.ravel(), T.ravel())
    fx, ft, wx, wt = F[2], F[3], F[4], F[5]
    e = sys.epsilon
    num = np.abs((1 + e * wt) * fx - e * wx * ft)
    sig = 0.0
    for s in np.linspace(-Kc, Kc, n_slopes) if Kc > 0 else [0.0]:
        den = (fx - e * wx * s) ** 2
        sig = max(sig, float(np.max(num / den)))
    if sig >= 1:
        raise ValueError(f"slope map does not contract (sigma_c = {sig:.4g}); epsilon too large")
    if Kc > 0:
        n_bar = max(1, math.ceil(math.log(rho_reg / (2 * Kc)) / math.log(sig)))
    else:
        n_bar = 1
    Gamma = nrm["domega_dtheta"] + Kc * nrm["domega_dx"]
    return ConeConstants(Ku, Kc, sig, n_bar, rho_reg, Gamma)


def slope_field(sys, p, n, seed=0.0, Kc=None):
    """The n-step center slope ``s_n(p)`` with terminal value ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    s = K.slope(*sys.kernel_args, sys.epsilon, float(p.x), float(p.theta), int(n), float(seed))
    if Kc is not None:
        assert abs(s) <= Kc * (1 + 1e-9) + 1e-15, "center cone violated"
    return s


def center_expansion_step(sys, p, s):
    """One-step growth ``1 + eps (w_t + w_x s)`` of a center vector of slope ``s``."""
    r = K.fields(*sys.kernel_args, float(p.x), float(p.theta))
    return 1.0 + sys.epsilon * (r[5] + r[4] * s)


def psi(sys, p, cones):
    """Regularized rate ``w_t(p) + w_x(p) s_nbar(p)`` at a point."""
    buf = np.empty((4, max(cones.n_bar, 1)))
    return K.psi_point(*sys.kernel_args, sys.epsilon, float(p.x), float(p.theta),
                       cones.n_bar, buf)


def psi_bar(sys, theta, N=4096, cones=None, density=None):
    """Fiber average of ``psi(., theta)`` against ``rho_theta``."""
    cones = cones if cones is not None else cone_constants(sys)
    rho = density if density is not None else invariant_density(sys, theta, N)
    N = rho.resolution
    x = ((np.arange(N)[:, None] + _GL_NODES[None, :]) / N).ravel()
    vals = K.psi_array(*sys.kernel_args, sys.epsilon, x, np.full(x.size, float(theta) % 1.0),
                       cones.n_bar)
    avg = vals.reshape(N, -1) @ _GL_WEIGHTS
    return float(np.mean(avg * rho.values))


@dataclass(frozen=True)
class CenterTrace:
    """Orbit records for the center direction.

    Arrays have length ``n + 1``; entry ``k`` refers to the k-th iterate.
    ``slope[k]`` is ``s_{n-k}(p_k)``, ``mu_factor[k]`` the growth factor at
    ``p_k`` with that slope (the last entry is the factor with slope 0),
    ``psi[k]`` the regularized rate and ``zeta[k] = eps sum_{j<k} psi[j]``.
    """

    x: np.ndarray
    theta: np.ndarray
    winding: np.ndarray
    slope: np.ndarray
    mu_factor: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    epsilon: float

    @property
    def n(self):
        return self.x.size - 1

    def log_mu(self, k=None):
        """``log mu_{n-k}(p_k)``: log growth from ``p_k`` to the tip."""
        lf = np.log(self.mu_factor[:-1])
        tail = np.concatenate([np.cumsum(lf[::-1])[::-1], [0.0]])
        return tail if k is None else tail[k]

    def rows(self):
        for k in range(self.x.size):
            yield (k, self.x[k], self.theta[k], self.slope[k], self.mu_factor[k],
                   self.psi[k], self.zeta[k])


def zeta_trace(sys, p, n, cones, jitter=None, seed=0.0):
    """Center trace of length ``n`` from ``p``.

    Parameters
    ----------
    sys : SystemSpec
    p : TorusPoint
    n : int
    cones : ConeConstants
    jitter : array_like, optional
        Fast-coordinate jitter per step (see ``system_model.jitter_stream``).
    seed : float
        Terminal slope for the n-step recursion.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > 10 ** 6:
        raise ValueError("horizons are capped at 10**6 steps")
    jit = np.zeros(max(n, 1)) if jitter is None else np.asarray(jitter, dtype=float)
    xs, ths, wind, F = K.orbit(*sys.kernel_args, sys.epsilon, float(p.x), float(p.theta), int(n), jit)
    e = sys.epsilon
    sl = K.backward_slopes(F, e, int(n), float(seed))
    mu = 1.0 + e * (F[5] + F[4] * sl)
    ps = K.psi_array(*sys.kernel_args, e, xs, ths, cones.n_bar)
    zeta = np.concatenate([[0.0], e * np.cumsum(ps[:-1])])
    return CenterTrace(xs, ths, wind, sl, mu, ps, zeta, e)


def growth_bound(trace, cones, m, n):
    """Check ``log mu_m(p) - log mu_{m-n}(F^n p) <= Gamma n eps`` on a trace.

    Uses the trace's own horizon, so ``m`` must equal ``trace.n``.
    Returns the slack ``Gamma n eps - (difference)``.
    """
    if m != trace.n:
        raise ValueError("m must equal the trace horizon")
    lm = trace.log_mu()
    return cones.Gamma * n * trace.epsilon - (lm[0] - lm[n])


def distortion_profile(sys, p, N, hs, cones):
    """Center expansion along the N-step center leaf through ``p``.

    Points ``q(h)`` on the leaf are obtained by integrating
    ``dx/dtheta = s_N(x, theta)`` from ``p`` over theta-distance ``h``
    (RK4, 16 substeps).  Returns ``log mu_N(q(h)) - zeta_N(p)`` for every
    ``h`` together with the rescaled slack
    ``(log mu_N(q) - zeta_N(p) - 2 T rho - 2 n_bar Gamma eps) / h``,
    whose maximum estimates the distortion constant.
    """
    e = sys.epsilon
    T = N * e
    base = zeta_trace(sys, p, N, cones)
    zN = base.zeta[-1]

    def leaf_point(h):
        x, t = float(p.x), float(p.theta)
        m = 16
        dt = h / m

        def rhs(x_, t_):
            return K.slope(*sys.kernel_args, e, x_ % 1.0, t_ % 1.0, int(N), 0.0)

        for _ in range(m):
            k1 = rhs(x, t)
            k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = rhs(x + dt * k3, t + dt)
            x += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            t += dt
        return TorusPoint(x, t)

    out = []
    for h in hs:
        q = leaf_point(float(h))
        lq = zeta_trace(sys, q, N, cones).log_mu(0)
        gap = lq - zN
        slack = (gap - 2 * T * cones.rho_reg - 2 * cones.n_bar * cones.Gamma * e) / max(abs(h), 1e-300)
        out.append((float(h), float(gap), float(slack)))
    return np.array(out)
