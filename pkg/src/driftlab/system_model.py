"""Fast-slow maps on the two-torus.

A system is the map

    F(x, theta) = (f(x, theta), theta + eps * omega(x, theta))  mod 1

with a uniformly expanding fast map ``f`` and a slow drive ``omega``.  Three
families are built in: skew products over ``x -> d x``, an affine non-skew
map and a theta-modulated non-skew family.  All partial derivatives are
supplied analytically.

Points live on ``[0, 1)^2``; every output is reduced into that square and
circle distances are always taken as ``min(|a - b|, 1 - |a - b|)``.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels as K

__all__ = [
    "TorusPoint",
    "BuiltinParams",
    "SystemSpec",
    "builtin_system",
    "evaluate_map",
    "jacobian",
    "jitter_stream",
    "circle_distance",
    "circle_diff",
    "wrap",
    "PRESETS",
    "preset",
]

_LAMBDA_GRID = 2 ** 14


def wrap(v):
    """Reduce values into [0, 1)."""
    v = np.asarray(v, dtype=float)
    r = v - np.floor(v)
    return np.where(r >= 1.0, r - 1.0, r)


def circle_distance(a, b):
    """Distance on the unit circle, in [0, 1/2]."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


def circle_diff(a, b):
    """Signed representative of ``a - b`` in [-1/2, 1/2)."""
    d = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + 0.5) % 1.0
    return d - 0.5


@dataclass(frozen=True)
class TorusPoint:
    """A point ``(x, theta)`` of the torus, reduced mod 1 on construction."""

    x: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(wrap(self.x)))
        object.__setattr__(self, "theta", float(wrap(self.theta)))

    def distance(self, other):
        """Sup of the two circle distances."""
        return max(float(circle_distance(self.x, other.x)),
                   float(circle_distance(self.theta, other.theta)))


def _coef_table(cos, sin):
    cos = [float(c) for c in cos]
    sin = [float(s) for s in sin]
    n = max(len(cos), len(sin))
    tab = np.zeros((n, 2))
    tab[: len(cos), 0] = cos
    tab[: len(sin), 1] = sin
    return tab


@dataclass(frozen=True)
class BuiltinParams:
    """Family tag plus parameters of a built-in system.

    Parameters
    ----------
    family : {'skew_doubling', 'affine_nonskew', 'nonexample'}
    degree : int
        Degree of the fast map for the skew family (2 is the doubling map).
    bar_cos, bar_sin : tuple of float
        Fourier coefficients of the averaged drive ``bar(theta)``; index
        ``k`` multiplies ``cos 2 pi k theta`` (resp. ``sin``).
    hat_cos, hat_sin : tuple of float
        Fourier coefficients of the zero-mean fluctuation ``hat(x)``.
    ell, a, b : float
        Parameters of the affine family ``(ell x + a theta,
        theta + eps (b cos 2 pi x - cos(2 pi theta) / 2 pi))``.
    alpha, beta : float
        Parameters of the non-skew family
        ``ell x + sin(2 pi theta) (alpha sin 2 pi x + beta sin 2 pi ell x)``.
    """

    family: str
    degree: int = 2
    bar_cos: tuple = ()
    bar_sin: tuple = ()
    hat_cos: tuple = ()
    hat_sin: tuple = ()
    ell: float = 5.0
    a: float = 0.1
    b: float = 3.0
    alpha: float = 0.05
    beta: float = 0.02

    def validate(self):
        if self.family == "skew_doubling":
            if int(self.degree) != self.degree or self.degree < 2:
                raise ValueError("skew degree must be an integer >= 2")
            if len(self.hat_cos) > 0 and self.hat_cos[0] != 0.0:
                raise ValueError("hat(x) must have zero mean (hat_cos[0] = 0)")
        elif self.family == "affine_nonskew":
            if int(self.ell) != self.ell or self.ell <= 2:
                raise ValueError("affine family needs an integer ell > 2")
        elif self.family == "nonexample":
            if int(self.ell) != self.ell or self.ell < 2:
                raise ValueError("nonexample needs an integer ell >= 2")
            margin = self.ell - 2 * math.pi * (abs(self.alpha) + self.ell * abs(self.beta))
            if margin <= 2:
                raise ValueError(
                    f"nonexample requires ell - 2 pi (alpha + ell beta) > 2, got {margin:.6g}")
        else:
            raise ValueError(f"unknown family {self.family!r}")


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A fast-slow map with exact partial derivatives.

    The scalar fields ``f``, ``omega`` and their partials are exposed as
    vectorized methods.  ``f`` returns the lifted value (not reduced mod 1),
    so that ``f(x + 1, theta) = f(x, theta) + degree``.

    Attributes
    ----------
    params : BuiltinParams
    epsilon : float
    lam : float
        Certified lower bound of ``df/dx`` (validated on a grid).
    degree : int
    norms : dict
        Sup-norms ``omega``, ``domega_dx``, ``domega_dtheta``, ``df_dtheta``.
    """

    params: BuiltinParams
    epsilon: float
    lam: float
    degree: int
    fam: int
    prm: np.ndarray = field(repr=False)
    cb: np.ndarray = field(repr=False)
    ch: np.ndarray = field(repr=False)
    norms: dict = field(default_factory=dict)

    @property
    def kernel_args(self):
        return (self.fam, self.prm, self.cb, self.ch)

    @property
    def is_skew(self):
        return self.fam == K.FAM_SKEW

    def with_epsilon(self, epsilon):
        """Same map family with a different ``epsilon``."""
        return builtin_system(self.params, epsilon)

    def _fields(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))
        shape = x.shape
        out = K.fields_array(*self.kernel_args, np.ascontiguousarray(x).ravel(),
                             np.ascontiguousarray(theta).ravel())
        return out.reshape((6,) + shape)

    def f(self, x, theta):
        return self._fields(x, theta)[0]

    def omega(self, x, theta):
        return self._fields(x, theta)[1]

    def df_dx(self, x, theta):
        return self._fields(x, theta)[2]

    def df_dtheta(self, x, theta):
        return self._fields(x, theta)[3]

    def domega_dx(self, x, theta):
        return self._fields(x, theta)[4]

    def domega_dtheta(self, x, theta):
        return self._fields(x, theta)[5]

    def step_arrays(self, x, theta, jitter=None):
        """Vectorized map evaluation; returns reduced ``(x', theta')``."""
        x = np.ascontiguousarray(x, dtype=float).ravel()
        theta = np.ascontiguousarray(theta, dtype=float).ravel()
        if jitter is None:
            jitter = np.zeros_like(x)
        jitter = np.ascontiguousarray(np.broadcast_to(jitter, x.shape), dtype=float)
        return K.map_array(*self.kernel_args, self.epsilon, x, theta, jitter)


def builtin_system(params, epsilon):
    """Build a :class:`SystemSpec` for one of the built-in families.

    Parameters
    ----------
    params : BuiltinParams
    epsilon : float
        Time-scale separation, must be positive.

    Returns
    -------
    SystemSpec

    Raises
    ------
    ValueError
        For invalid parameters, ``epsilon <= 0`` or a failed expansion check.
    """
    params.validate()
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    empty = np.zeros((0, 2))
    if params.family == "skew_doubling":
        d = int(params.degree)
        fam, prm = K.FAM_SKEW, np.array([float(d)])
        cb = _coef_table(params.bar_cos, params.bar_sin)
        ch = _coef_table(params.hat_cos, params.hat_sin)
        lam = float(d)
    elif params.family == "affine_nonskew":
        d = int(params.ell)
        fam, prm = K.FAM_AFFINE, np.array([params.ell, params.a, params.b])
        cb = ch = empty
        lam = float(params.ell)
    else:
        d = int(params.ell)
        fam, prm = K.FAM_NONEX, np.array([params.ell, params.alpha, params.beta])
        cb = ch = empty
        lam = params.ell - 2 * math.pi * (abs(params.alpha) + params.ell * abs(params.beta))

    side = int(round(math.sqrt(_LAMBDA_GRID)))
    g = (np.arange(side) + 0.5) / side
    X, T = np.meshgrid(g, g)
    sysp = SystemSpec(params, epsilon, lam, d, fam, prm, cb, ch, {})
    F = sysp._fields(X, T)
    fxmin = float(F[2].min())
    if fxmin < lam - 1e-12 or lam < 2:
        raise ValueError(f"expansion check failed: min df/dx = {fxmin:.6g}, lambda = {lam:.6g}")
    norms = {
        "omega": float(np.abs(F[1]).max()),
        "df_dtheta": float(np.abs(F[3]).max()),
        "domega_dx": float(np.abs(F[4]).max()),
        "domega_dtheta": float(np.abs(F[5]).max()),
    }
    # analytic sup-norm bounds where cheap and sharper than sampling
    if fam == K.FAM_SKEW:
        kk = np.arange(cb.shape[0])
        kh = np.arange(ch.shape[0])
        norms["omega"] = max(norms["omega"], float(np.abs(cb).sum() + np.abs(ch).sum()))
        norms["domega_dx"] = max(norms["domega_dx"], float(2 * math.pi * (kh[:, None] * np.abs(ch)).sum()))
        norms["domega_dtheta"] = max(norms["domega_dtheta"], float(2 * math.pi * (kk[:, None] * np.abs(cb)).sum()))
        norms["df_dtheta"] = 0.0
    elif fam == K.FAM_AFFINE:
        norms["omega"] = abs(params.b) + 1 / (2 * math.pi)
        norms["domega_dx"] = 2 * math.pi * abs(params.b)
        norms["domega_dtheta"] = 1.0
        norms["df_dtheta"] = abs(params.a)
    else:
        norms["omega"] = 1.0
        norms["domega_dx"] = 2 * math.pi
        norms["domega_dtheta"] = 0.0
        norms["df_dtheta"] = 2 * math.pi * (abs(params.alpha) + abs(params.beta))
    return SystemSpec(params, epsilon, lam, d, fam, prm, cb, ch, norms)


def evaluate_map(sys, p, jitter=0.0):
    """Apply the map once.

    Parameters
    ----------
    sys : SystemSpec
    p : TorusPoint
    jitter : float, optional
        Amount added to the fast coordinate before reduction.  Ensembles
        use a tiny counter-based value here (see :func:`jitter_stream`) to
        keep the low-order bits of ``x`` populated; the default leaves the
        map untouched.

    Returns
    -------
    TorusPoint
    """
    xn, tn, _ = K.step(*sys.kernel_args, sys.epsilon, float(p.x), float(p.theta), float(jitter))
    return TorusPoint(xn, tn)


def jitter_stream(seed, index, n, scale=K.JITTER_SCALE, start=0):
    """The jitter values used by particle ``index`` of an ensemble.

    Composing :func:`evaluate_map` with these values reproduces the
    ensemble trajectory of that particle bit for bit.
    """
    return np.array([K.jitter_value(seed, index, start + k, scale) for k in range(n)])


def jacobian(sys, p):
    """Derivative matrix ``[[f_x, f_theta], [eps omega_x, 1 + eps omega_theta]]``."""
    r = K.fields(*sys.kernel_args, float(p.x), float(p.theta))
    e = sys.epsilon
    return np.array([[r[2], r[3]], [e * r[4], 1.0 + e * r[5]]])


# ---------------------------------------------------------------------------
# named presets
# ---------------------------------------------------------------------------

def _fejer_hat(peak=3.0, order=11):
    """Zero-mean Fejer bump with maximum ``peak`` at x = 0 and min ``-peak/(order-1)``."""
    c = peak / (order - 1)
    cos = [0.0] + [2 * c * (1 - k / order) for k in range(1, order)]
    return tuple(cos)


def _odd_hat(peak, modes):
    """Equal-weight sum of odd cosine modes with value ``peak`` at x = 0.

    Odd modes are never linked by the doubling map, so the Green-Kubo
    variance is just ``peak^2 / (2 len(modes))``.
    """
    cos = [0.0] * (max(modes) + 1)
    for k in modes:
        cos[k] = peak / len(modes)
    return tuple(cos)


PRESETS = {
    "one_sink": (
        BuiltinParams("skew_doubling", bar_sin=(0.0, 1 / (2 * math.pi)),
                      hat_cos=_odd_hat(3.0, (3, 5, 7, 9, 11))),
        "skew over doubling, bar = sin(2 pi theta)/2pi (sink at 1/2, slope -1), "
        "hat = 0.6 sum of cos 2 pi k x over k = 3, 5, 7, 9, 11 (hat(0) = 3, sigma^2 = 0.9)",
    ),
    "one_sink_cos": (
        BuiltinParams("skew_doubling", bar_sin=(0.0, 1 / (2 * math.pi)), hat_cos=(0.0, 3.0)),
        "skew over doubling, bar = sin(2 pi theta)/2pi (sink at 1/2, slope -1), hat = 3 cos 2 pi x",
    ),
    "two_sink_nonergodic": (
        BuiltinParams("skew_doubling", bar_sin=(0.0, 0.0, 1.0), hat_cos=(0.0, 0.5)),
        "skew over doubling, bar = sin 4 pi theta, hat = cos(2 pi x)/2",
    ),
    "two_sink_ergodic": (
        BuiltinParams("skew_doubling", bar_sin=(0.0, 0.0, 1.0), hat_cos=_fejer_hat()),
        "skew over doubling, bar = sin 4 pi theta, hat = Fejer bump, -0.3 <= hat <= 3 = hat(0)",
    ),
    "affine_nonskew": (
        BuiltinParams("affine_nonskew", ell=5.0, a=0.1, b=3.0),
        "(5x + 0.1 theta, theta + eps(3 cos 2 pi x - cos(2 pi theta)/2pi))",
    ),
    "nonexample": (
        BuiltinParams("nonexample", ell=5.0, alpha=0.05, beta=0.02),
        "(5x + sin 2 pi theta (0.05 sin 2 pi x + 0.02 sin 10 pi x), theta + eps cos 2 pi x)",
    ),
}


def preset(name, epsilon):
    """System for a named preset (see ``PRESETS``)."""
    try:
        params = PRESETS[name][0]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return builtin_system(params, epsilon)
