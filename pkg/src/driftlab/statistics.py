"""Empirical checks on ensembles: LCLT, correlation decay, SRB histograms,
metastable transitions and a vertical Wasserstein distance.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import integrate, stats

from . import _kernels as K
from .averaged_dynamics import integrate_averaged

__all__ = [
    "Observable",
    "LCLTResult",
    "DecayFit",
    "SRBHistogram",
    "MetastabilityReport",
    "lclt_variance",
    "lclt_check",
    "correlation_decay",
    "srb_histogram",
    "metastability_report",
    "wasserstein_vertical",
    "circle_w1",
    "fit_exponent",
]


# ---------------------------------------------------------------------------
# observables


def _table(cos=(), sin=()):
    n = max(len(cos), len(sin))
    t = np.zeros((n, 2))
    t[: len(cos), 0] = cos
    t[: len(sin), 1] = sin
    return t


@dataclass(frozen=True, eq=False)
class Observable:
    """Product observable ``B(x, theta) = Bth(theta) * Bx(x)``.

    Each factor is a trigonometric polynomial given by coefficient tables
    (column 0 cosines, column 1 sines, row k frequency k).  An empty table
    stands for the constant 1.
    """

    theta_coef: np.ndarray
    x_coef: np.ndarray
    name: str = ""

    @classmethod
    def from_coefficients(cls, theta_cos=(), theta_sin=(), x_cos=(), x_sin=(), name=""):
        return cls(_table(theta_cos, theta_sin), _table(x_cos, x_sin), name)

    def __call__(self, x, theta):
        return self._eval(self.theta_coef, theta) * self._eval(self.x_coef, x)

    @staticmethod
    def _eval(c, t):
        t = np.asarray(t, float)
        if c.shape[0] == 0:
            return np.ones_like(t)
        k = np.arange(c.shape[0])
        ang = 2 * np.pi * np.multiply.outer(t, k)
        return np.cos(ang) @ c[:, 0] + np.sin(ang) @ c[:, 1]

    @property
    def lebesgue_mean(self):
        a = self.theta_coef[0, 0] if self.theta_coef.shape[0] else 1.0
        b = self.x_coef[0, 0] if self.x_coef.shape[0] else 1.0
        return float(a * b)

    @property
    def sup_norm(self):
        a = np.abs(self.theta_coef).sum() if self.theta_coef.shape[0] else 1.0
        b = np.abs(self.x_coef).sum() if self.x_coef.shape[0] else 1.0
        return float(a * b)

    def scaled(self, c):
        return Observable(self.theta_coef * c, self.x_coef, self.name)


# ---------------------------------------------------------------------------
# local CLT


@dataclass(frozen=True)
class LCLTResult:
    """Comparison of ``dtheta(t) / sqrt(eps)`` with ``N(0, Sigma_t^2)``."""

    t: float
    theta0: float
    sigma2_t: float
    empirical_variance: float
    variance_ratio: float
    ks: float
    ks_pvalue: float
    samples: int

    def as_dict(self):
        return dict(self.__dict__)


def lclt_variance(field, theta0, t, h=1e-3):
    """``Sigma_t^2 = int_0^t exp(2 int_s^t omega_bar'(theta_bar)) sigma2(theta_bar(s)) ds``.

    ``theta_bar`` is integrated with RK4 (step ``h``) and the two integrals
    are evaluated with the trapezoid rule on the same nodes, which is
    second order in ``h``.
    """
    s, th, _ = integrate_averaged(field, theta0, t, h)
    d = np.asarray(field.d_omega(th), float)
    # inner(s) = int_s^t d(r) dr
    cum = integrate.cumulative_trapezoid(d, s, initial=0.0)
    inner = cum[-1] - cum
    integrand = np.exp(2 * inner) * np.asarray(field.var(th), float)
    return float(integrate.trapezoid(integrand, s))


def lclt_check(deviations, field, theta0, t, epsilon, enforce_floor=True):
    """Test the Gaussian law of the rescaled slow deviation.

    Parameters
    ----------
    deviations : array_like
        ``theta_eps(t) - theta_bar(t)`` for each particle (unscaled).
    field : AveragedField
    theta0 : float
        Start of the averaged reference.
    t : float
        Slow time, in ``[0.25, 4]``.
    epsilon : float
        The epsilon matching the slow time of ``field``.
    enforce_floor : bool
        Refuse times below ``epsilon**(1/2000)``, the lower end of the
        range in which the limit law is asserted.

    Returns
    -------
    LCLTResult
    """
    if not 0.25 <= t <= 4:
        raise ValueError("t must lie in [0.25, 4]")
    if enforce_floor and t < epsilon ** (1 / 2000):
        raise ValueError(f"t={t} is below the validity floor eps**(1/2000)={epsilon ** (1 / 2000):.4f}")
    z = np.asarray(deviations, float) / math.sqrt(epsilon)
    if z.size < 10 ** 5:
        warnings.warn(f"only {z.size} samples; KS thresholds assume 1e5", RuntimeWarning)
    s2 = lclt_variance(field, theta0, t)
    emp = float(np.var(z))
    ks = stats.kstest(z, "norm", args=(0.0, math.sqrt(s2)))
    return LCLTResult(float(t), float(theta0), s2, emp, emp / s2, float(ks.statistic),
                      float(ks.pvalue), int(z.size))


# ---------------------------------------------------------------------------
# correlation decay


class NoDecayDetected(RuntimeError):
    pass


@dataclass
class DecayFit:
    """Correlation curve and its exponential fit.

    ``corr[n] = Leb(A * B o F^n) - Leb(A) mu(B)``; ``sigma[n]`` is its block
    bootstrap standard deviation.  ``rate`` is the fitted decay rate per
    step over the lags ``window`` (only lags with ``|corr| > 3 sigma`` are
    used).  ``mu_B`` comes from the tail of the same run.
    """

    description: str
    epsilon: float
    lags: np.ndarray
    corr: np.ndarray
    sigma: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    leb_A: float
    mu_B: float
    mu_B_sigma: float
    rate: float
    window: tuple
    r2: float
    status: str = "ok"

    def as_dict(self):
        return {
            "description": self.description,
            "epsilon": self.epsilon,
            "rate_per_step": self.rate,
            "rate_slow_time": self.rate / self.epsilon,
            "fit_window": list(self.window),
            "r2": self.r2,
            "leb_A": self.leb_A,
            "mu_B": self.mu_B,
            "mu_B_sigma": self.mu_B_sigma,
            "status": self.status,
        }

    def rows(self):
        for r in zip(self.lags, self.corr, self.sigma, self.ci_low, self.ci_high):
            yield (int(r[0]),) + tuple(float(v) for v in r[1:])


def _bootstrap(blocks_a, blocks_1, leb_A, tail, reps, seed):
    """Bootstrap over particle blocks of the correlation curve."""
    rng = np.random.default_rng(seed)
    nb = blocks_a.shape[0]
    curves = np.empty((reps, blocks_a.shape[1]))
    mus = np.empty(reps)
    for r in range(reps):
        idx = rng.integers(0, nb, nb)
        sa = blocks_a[idx].sum(axis=0)
        s1 = blocks_1[idx].sum(axis=0)
        mu = s1[tail].mean()
        curves[r] = sa - leb_A * mu
        mus[r] = mu
    return curves, mus


def correlation_decay(sys, A, B, n_max, count, seed=0, window=None, tail_fraction=0.25,
                      nblocks=64, reps=200, jitter=True):
    """Estimate ``Leb(A * B o F^n) - Leb(A) mu_eps(B)`` and its decay rate.

    Lebesgue measure on the torus is represented by ``count`` uniform
    particles.  ``mu_eps(B)`` is the average of ``Leb(B o F^n)`` over the
    last ``tail_fraction`` of the lags.

    Parameters
    ----------
    sys : SystemSpec
    A, B : Observable
    n_max : int
        Largest lag.
    count : int
        Number of particles.
    window : (int, int), optional
        Lags used for the fit (default: the first 60% of the lags).  Inside
        it only lags with ``|corr| > 3 sigma`` enter.

    Returns
    -------
    DecayFit
    """
    rng = np.random.default_rng(seed)
    x = rng.random(count)
    th = rng.random(count)
    pid = np.arange(count, dtype=np.int64)
    a = A(x, th)
    W = np.vstack([a / count, np.full(count, 1.0 / count)])
    sums = K.observable_means(*sys.kernel_args, float(sys.epsilon), x, th, pid, np.uint64(seed),
                              int(n_max), K.JITTER_SCALE if jitter else 0.0, W,
                              B.theta_coef, B.x_coef, int(nblocks))
    leb_A = A.lebesgue_mean
    lags = np.arange(n_max + 1)
    tail = lags >= int((1 - tail_fraction) * n_max)
    s_a = sums[0].sum(axis=0)
    s_1 = sums[1].sum(axis=0)
    mu_B = float(s_1[tail].mean())
    corr = s_a - leb_A * mu_B
    curves, mus = _bootstrap(sums[0], sums[1], leb_A, tail, reps, seed + 1)
    sigma = curves.std(axis=0)
    lo, hi = np.quantile(curves, [0.025, 0.975], axis=0)
    if window is None:
        window = (0, int(0.6 * n_max))
    w0, w1 = window
    sel = (lags >= w0) & (lags <= w1) & (np.abs(corr) > 3 * sigma)
    sel &= np.sign(corr) == np.sign(corr[w0])
    desc = f"A={A.name or 'A'}, B={B.name or 'B'}"
    if sel.sum() < 4:
        return DecayFit(desc, sys.epsilon, lags, corr, sigma, lo, hi, leb_A, mu_B,
                        float(mus.std()), float("nan"), (w0, w1), float("nan"),
                        "no-decay-detected")
    fit = stats.linregress(lags[sel], np.log(np.abs(corr[sel])))
    rate = -float(fit.slope)
    status = "ok" if rate > 0 else "no-decay-detected"
    return DecayFit(desc, sys.epsilon, lags, corr, sigma, lo, hi, leb_A, mu_B,
                    float(mus.std()), rate, (int(lags[sel][0]), int(lags[sel][-1])),
                    float(fit.rvalue ** 2), status)


def fit_exponent(eps, rates):
    """Slope and R^2 of ``log rate`` against ``log eps``."""
    fit = stats.linregress(np.log(eps), np.log(rates))
    return float(fit.slope), float(fit.rvalue ** 2)


# ---------------------------------------------------------------------------
# SRB histogram


@dataclass
class SRBHistogram:
    """Empirical invariant measure of an ensemble after burn-in.

    ``counts`` has shape ``(nbx, nbt)``; ``theta_density`` is the
    theta-marginal normalized as a density.  ``masses[k]`` is the share of
    samples in the forward basin of sink ``k``; ``fits[k]`` holds the
    center and variance of the marginal restricted to ``H_k``.
    """

    counts: np.ndarray
    theta_density: np.ndarray
    burn: int
    steps: int
    sinks: np.ndarray
    masses: np.ndarray
    fits: list
    outside_H: float
    halves_l1: float
    bootstrap_sigma: float
    epsilon: float
    basin: np.ndarray = None

    @property
    def theta_edges(self):
        return np.linspace(0, 1, self.counts.shape[1] + 1)

    @property
    def theta_centers(self):
        e = self.theta_edges
        return 0.5 * (e[1:] + e[:-1])

    def as_dict(self):
        return {
            "epsilon": self.epsilon,
            "burn": self.burn,
            "steps": self.steps,
            "sinks": self.sinks.tolist(),
            "masses": self.masses.tolist(),
            "fits": self.fits,
            "outside_H": self.outside_H,
            "halves_l1": self.halves_l1,
            "bootstrap_sigma": self.bootstrap_sigma,
        }


def _basin_index(theta, cls):
    """Forward-basin index of each theta (basin k lies between sources k and k+1)."""
    src = np.sort(cls.sources)
    order = np.argsort(cls.sources)
    pos = np.searchsorted(src, theta, side="right") - 1
    pos = np.where(pos < 0, src.size - 1, pos)
    return order[pos]


def _marginal_l1(a, b):
    pa = a / a.sum()
    pb = b / b.sum()
    return float(np.abs(pa - pb).sum())


def srb_histogram(sys, ens, burn, steps, cls, bins=(64, 1024), sample_every=1, nblocks=32,
                  reps=200, jitter=True):
    """Occupation histogram of ``(x, theta)`` after ``burn`` steps.

    Parameters
    ----------
    sys : SystemSpec
    ens : Ensemble
        Starting particles (not modified).
    burn, steps : int
        Burn-in and total number of steps (samples are taken at
        ``burn, burn + sample_every, ..., steps``).
    cls : ZeroClassification
        Sinks, basins and neighborhoods ``H_k``.
    bins : (int, int)
        Number of x and theta bins.
    """
    if burn > steps:
        raise ValueError("burn must not exceed steps")
    x = ens.x.copy()
    th = ens.theta.copy()
    nbx, nbt = bins
    blocks = K.occupation(*sys.kernel_args, float(sys.epsilon), x, th, ens.pid,
                          np.uint64(ens.seed), np.int64(ens.n), int(steps),
                          K.JITTER_SCALE if jitter else 0.0, int(burn), int(sample_every),
                          int(nbx), int(nbt), int(nblocks))
    counts = blocks.sum(axis=0)
    marg_blocks = blocks.sum(axis=1).astype(float)
    marg = counts.sum(axis=0).astype(float)
    total = marg.sum()
    dens = marg / total * nbt
    centers = (np.arange(nbt) + 0.5) / nbt
    basin = _basin_index(centers, cls)
    masses = np.array([marg[basin == k].sum() / total for k in range(cls.n_Z)])
    inH = cls.in_H(centers)
    outside = float(marg[inH < 0].sum() / total)
    fits = []
    for k, z in enumerate(cls.sinks):
        sel = inH == k
        d = (centers[sel] - z + 0.5) % 1.0 - 0.5
        w = marg[sel]
        if w.sum() == 0:
            fits.append({"center": float("nan"), "variance": float("nan"), "mass": 0.0})
            continue
        m = float(np.sum(w * d) / w.sum())
        v = float(np.sum(w * (d - m) ** 2) / w.sum()) - 1.0 / (12 * nbt ** 2)
        fits.append({"center": float((z + m) % 1.0), "variance": v,
                     "mass": float(w.sum() / total)})
    half = nblocks // 2
    l1 = _marginal_l1(marg_blocks[:half].sum(axis=0), marg_blocks[half:].sum(axis=0))
    rng = np.random.default_rng(ens.seed + 17)
    boot = []
    for _ in range(reps):
        idx = rng.integers(0, nblocks, nblocks)
        boot.append(_marginal_l1(marg_blocks[idx[:half]].sum(axis=0),
                                 marg_blocks[idx[half:]].sum(axis=0)))
    bsig = float(np.std(boot))
    if l1 > np.mean(boot) + 3 * bsig:
        warnings.warn("independent halves of the ensemble disagree beyond bootstrap noise",
                      RuntimeWarning)
    return SRBHistogram(counts, dens, int(burn), int(steps), cls.sinks.copy(), masses, fits,
                        outside, l1, bsig, float(sys.epsilon), basin)


# ---------------------------------------------------------------------------
# metastability


@dataclass
class MetastabilityReport:
    """Per-epsilon sink masses, transition counts and passage times.

    ``rows`` holds one dict per epsilon with ``masses``, ``transitions``,
    ``mean_passage`` (slow time, NaN when censored) and ``horizon``.
    ``slope``, ``intercept`` and ``r2`` describe the regression of
    ``log mean_passage`` on ``1 / eps`` over the uncensored rows.
    """

    rows: list
    slope: float
    intercept: float
    r2: float
    status: str

    def as_dict(self):
        return {"rows": self.rows, "slope": self.slope, "intercept": self.intercept,
                "r2": self.r2, "status": self.status}


def sink_run(sys, cls, x, theta, seed, steps, burn=0, radius=None, debounce=10, nbins=256,
             sample_every=1, jitter=True, pid=None):
    """Run particles, tracking confirmed sink visits and the occupation of theta.

    Returns a dict with ``masses`` (share of post-burn samples per forward
    basin), ``transitions`` (total confirmed passages), ``mean_passage``
    (slow time), ``first`` and ``last`` (sink indices per particle).
    """
    x = np.ascontiguousarray(x, float).copy()
    th = np.ascontiguousarray(theta, float).copy() % 1.0
    pid = np.arange(x.size, dtype=np.int64) if pid is None else np.asarray(pid, np.int64)
    r = cls.r_minus / 2 if radius is None else radius
    hist, npass, tsum, last, first = K.sink_visits(
        *sys.kernel_args, float(sys.epsilon), x, th, pid, np.uint64(seed), int(steps),
        K.JITTER_SCALE if jitter else 0.0, np.ascontiguousarray(cls.sinks, float), float(r),
        int(debounce), int(burn), int(nbins), int(sample_every))
    occ = hist.sum(axis=0).astype(float)
    centers = (np.arange(nbins) + 0.5) / nbins
    basin = _basin_index(centers, cls)
    tot = occ.sum()
    masses = [float(occ[basin == k].sum() / tot) if tot else float("nan")
              for k in range(cls.n_Z)]
    n = int(npass.sum())
    mean = float(tsum.sum() / n * sys.epsilon) if n else float("nan")
    return {"epsilon": float(sys.epsilon), "masses": masses, "transitions": n,
            "mean_passage": mean, "horizon": float(steps * sys.epsilon),
            "particles": int(x.size), "first": first, "last": last, "occupation": occ}


def metastability_report(sys, cls, count, steps, eps_list, seed=0, burn=None, debounce=10,
                         sample_every=1, start_sink=None):
    """Sink masses and passage times over a sweep of epsilon.

    Particles start uniformly on the torus, or on the fiber of sink
    ``start_sink`` (x uniform) when it is given; the latter makes equal
    masses a statement about transitions rather than about symmetric
    initial data.  For each epsilon the run lasts ``steps`` steps (an int
    or one value per epsilon).  The log of the mean passage time is
    regressed on ``1 / eps``.
    """
    if cls.n_Z < 2:
        raise ValueError("metastability needs at least two sinks")
    steps_l = [steps] * len(eps_list) if np.isscalar(steps) else list(steps)
    rows = []
    for e, n in zip(eps_list, steps_l):
        s = sys.with_epsilon(e)
        rng = np.random.default_rng(seed)
        x = rng.random(count)
        th = rng.random(count) if start_sink is None else np.full(count, cls.sinks[start_sink])
        b = int(n // 10) if burn is None else int(burn)
        res = sink_run(s, cls, x, th, seed, int(n), b, debounce=debounce,
                       sample_every=sample_every)
        row = {k: v for k, v in res.items() if k not in ("first", "last", "occupation")}
        if res["transitions"] == 0:
            row["note"] = f"no transitions observed within horizon {res['horizon']:g}"
        rows.append(row)
    good = [r for r in rows if r["transitions"] > 0]
    if len(good) >= 2:
        inv = np.array([1 / r["epsilon"] for r in good])
        lt = np.log([r["mean_passage"] for r in good])
        if len(good) >= 3:
            fit = stats.linregress(inv, lt)
            slope, icpt, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
        else:
            slope = float((lt[1] - lt[0]) / (inv[1] - inv[0]))
            icpt = float(lt[0] - slope * inv[0])
            r2 = 1.0
        status = "ok"
    else:
        slope = icpt = r2 = float("nan")
        status = "no transitions observed"
    return MetastabilityReport(rows, slope, icpt, r2, status)


# ---------------------------------------------------------------------------
# vertical Wasserstein distance


def circle_w1(a, wa, b, wb):
    """W1 distance on the unit circle between two weighted samples.

    Weights of each sample are normalized.  Uses the identity
    ``W1 = min_c int |F_a - F_b - c|``, with the minimizing ``c`` a
    weighted median of ``F_a - F_b``.
    """
    a = np.asarray(a, float) % 1.0
    b = np.asarray(b, float) % 1.0
    wa = np.asarray(wa, float) / np.sum(wa)
    wb = np.asarray(wb, float) / np.sum(wb)
    pts = np.concatenate([a, b])
    jumps = np.concatenate([wa, -wb])
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    D = np.cumsum(jumps[order])
    lengths = np.diff(np.append(pts, pts[0] + 1.0))
    # D is constant on [pts[i], pts[i+1])
    o = np.argsort(D, kind="stable")
    cw = np.cumsum(lengths[o])
    c = D[o][np.searchsorted(cw, 0.5 * cw[-1])]
    return float(np.sum(lengths * np.abs(D - c)))


def wasserstein_vertical(xa, ta, wa, xb, tb, wb, x_bins=256):
    """Vertical transport distance between two weighted particle clouds.

    Particles are binned by ``x``.  Within a bin the common mass is moved
    vertically at cost ``circle_w1``; mass that cannot be matched inside
    its bin is charged at cost 1 (half the total absolute imbalance).

    Returns
    -------
    float in [0, 1]
    """
    wa = np.asarray(wa, float) / np.sum(wa)
    wb = np.asarray(wb, float) / np.sum(wb)
    ia = np.minimum((np.asarray(xa) % 1.0 * x_bins).astype(int), x_bins - 1)
    ib = np.minimum((np.asarray(xb) % 1.0 * x_bins).astype(int), x_bins - 1)
    ma = np.bincount(ia, wa, x_bins)
    mb = np.bincount(ib, wb, x_bins)
    total = 0.5 * float(np.abs(ma - mb).sum())
    oa = np.argsort(ia, kind="stable")
    ob = np.argsort(ib, kind="stable")
    sa = np.searchsorted(ia[oa], np.arange(x_bins + 1))
    sb = np.searchsorted(ib[ob], np.arange(x_bins + 1))
    ta = np.asarray(ta, float)
    tb = np.asarray(tb, float)
    for j in np.flatnonzero((ma > 0) & (mb > 0)):
        pa = oa[sa[j]:sa[j + 1]]
        pb = ob[sb[j]:sb[j + 1]]
        total += min(ma[j], mb[j]) * circle_w1(ta[pa], wa[pa], tb[pb], wb[pb])
    return float(min(max(total, 0.0), 1.0))
