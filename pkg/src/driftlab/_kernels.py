"""Compiled inner loops shared by the public modules.

Every map family is identified by an integer code and evaluated from a
flat parameter vector plus two Fourier coefficient tables.  The tables are
only used by the skew family; the other families receive empty tables.

Family codes
------------
0 : skew product over ``x -> d x`` with ``omega = bar(theta) + hat(x)``
1 : affine non-skew map ``(l x + a theta, theta + eps omega)``
2 : non-skew family with a theta-modulated fast map

All kernels are pure functions of their arguments.  Random numbers are
produced by a counter-based hash, so results never depend on thread
scheduling.
"""

import math
import warnings

import numpy as np
from numba import njit, prange

# numba falls back to another threading layer when the installed TBB is too
# old; the fallback is harmless and the warning only adds noise
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

TWO_PI = 2.0 * math.pi

FAM_SKEW = 0
FAM_AFFINE = 1
FAM_NONEX = 2

# Scale of the low-order bit refresh added to the fast coordinate.
JITTER_SCALE = 2.0 ** -50

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


# ---------------------------------------------------------------------------
# counter-based random numbers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def stream_key(seed, index):
    """Key of the random stream owned by particle ``index``."""
    return _mix(np.uint64(seed) * _GOLDEN ^ _mix(np.uint64(index) + _GOLDEN))


@njit(cache=True)
def uniform(key, counter):
    """Uniform number in [0, 1) for position ``counter`` of a stream."""
    u = _mix(key + np.uint64(counter) * _GOLDEN)
    return float(u >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def normal(key, counter):
    """Standard normal deviate via Box-Muller on two stream positions."""
    u1 = uniform(key, 2 * counter)
    u2 = uniform(key, 2 * counter + 1)
    r = math.sqrt(-2.0 * math.log(1.0 - u1))
    return r * math.cos(TWO_PI * u2)


@njit(cache=True)
def jitter_value(seed, index, step, scale):
    if scale == 0.0:
        return 0.0
    return scale * uniform(stream_key(seed, index), step)


# ---------------------------------------------------------------------------
# family evaluation
# ---------------------------------------------------------------------------

@njit(cache=True)
def fourier(c, t):
    """Value and derivative of ``sum_k c[k,0] cos 2pi k t + c[k,1] sin 2pi k t``."""
    K = c.shape[0]
    if K == 0:
        return 0.0, 0.0
    val = c[0, 0]
    der = 0.0
    if K == 1:
        return val, der
    c1 = math.cos(TWO_PI * t)
    s1 = math.sin(TWO_PI * t)
    ck = 1.0
    sk = 0.0
    for k in range(1, K):
        ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1
        val += c[k, 0] * ck + c[k, 1] * sk
        der += TWO_PI * k * (c[k, 1] * ck - c[k, 0] * sk)
    return val, der


@njit(cache=True)
def fourier_value(c, t):
    K = c.shape[0]
    if K == 0:
        return 0.0
    val = c[0, 0]
    if K == 1:
        return val
    c1 = math.cos(TWO_PI * t)
    s1 = math.sin(TWO_PI * t)
    ck = 1.0
    sk = 0.0
    for k in range(1, K):
        ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1
        val += c[k, 0] * ck + c[k, 1] * sk
    return val


@njit(cache=True)
def fast_and_drive(fam, prm, cb, ch, x, th):
    """Lifted fast map ``f(x, theta)`` and slow drive ``omega(x, theta)``."""
    if fam == FAM_SKEW:
        return prm[0] * x, fourier_value(cb, th) + fourier_value(ch, x)
    elif fam == FAM_AFFINE:
        return (prm[0] * x + prm[1] * th,
                prm[2] * math.cos(TWO_PI * x) - math.cos(TWO_PI * th) / TWO_PI)
    else:
        ell = prm[0]
        g = prm[1] * math.sin(TWO_PI * x) + prm[2] * math.sin(TWO_PI * ell * x)
        return ell * x + math.sin(TWO_PI * th) * g, math.cos(TWO_PI * x)


@njit(cache=True)
def fields(fam, prm, cb, ch, x, th):
    """Return ``(f, omega, f_x, f_theta, omega_x, omega_theta)`` at a point."""
    if fam == FAM_SKEW:
        d = prm[0]
        wb, wbp = fourier(cb, th)
        wh, whp = fourier(ch, x)
        return d * x, wb + wh, d, 0.0, whp, wbp
    elif fam == FAM_AFFINE:
        ell = prm[0]
        a = prm[1]
        b = prm[2]
        return (ell * x + a * th,
                b * math.cos(TWO_PI * x) - math.cos(TWO_PI * th) / TWO_PI,
                ell, a,
                -TWO_PI * b * math.sin(TWO_PI * x),
                math.sin(TWO_PI * th))
    else:
        ell = prm[0]
        al = prm[1]
        be = prm[2]
        st = math.sin(TWO_PI * th)
        ct = math.cos(TWO_PI * th)
        sx = math.sin(TWO_PI * x)
        g = al * sx + be * math.sin(TWO_PI * ell * x)
        gx = TWO_PI * (al * math.cos(TWO_PI * x) + ell * be * math.cos(TWO_PI * ell * x))
        return (ell * x + st * g, math.cos(TWO_PI * x), ell + st * gx,
                TWO_PI * ct * g, -TWO_PI * sx, 0.0)


@njit(cache=True)
def wrap(v):
    k = math.floor(v)
    r = v - k
    if r >= 1.0:
        r -= 1.0
        k += 1.0
    return r, k


@njit(cache=True)
def step(fam, prm, cb, ch, eps, x, th, jit):
    """One application of the map; returns ``(x', theta', winding)``."""
    fl, w = fast_and_drive(fam, prm, cb, ch, x, th)
    xn, _ = wrap(fl + jit)
    tn, k = wrap(th + eps * w)
    return xn, tn, k


@njit(cache=True)
def fields_array(fam, prm, cb, ch, x, th):
    n = x.size
    out = np.empty((6, n))
    for i in range(n):
        r = fields(fam, prm, cb, ch, x[i], th[i])
        for j in range(6):
            out[j, i] = r[j]
    return out


@njit(cache=True)
def map_array(fam, prm, cb, ch, eps, x, th, jit):
    n = x.size
    xo = np.empty(n)
    to = np.empty(n)
    for i in range(n):
        xo[i], to[i], _ = step(fam, prm, cb, ch, eps, x[i], th[i], jit[i])
    return xo, to


# ---------------------------------------------------------------------------
# center slopes
# ---------------------------------------------------------------------------

@njit(cache=True)
def slope_with_buffer(fam, prm, cb, ch, eps, x, th, n, seed, buf):
    """Backward slope recursion of depth ``n`` started from ``seed`` at the tip.

    ``buf`` must have shape (4, n) and is overwritten with the partials
    along the forward orbit.
    """
    xi = x
    ti = th
    for k in range(n):
        r = fields(fam, prm, cb, ch, xi, ti)
        buf[0, k] = r[2]
        buf[1, k] = r[3]
        buf[2, k] = r[4]
        buf[3, k] = r[5]
        xi, _ = wrap(r[0])
        ti, _ = wrap(ti + eps * r[1])
    s = seed
    for k in range(n - 1, -1, -1):
        s = ((1.0 + eps * buf[3, k]) * s - buf[1, k]) / (buf[0, k] - eps * buf[2, k] * s)
    return s


@njit(cache=True)
def slope(fam, prm, cb, ch, eps, x, th, n, seed):
    buf = np.empty((4, max(n, 1)))
    return slope_with_buffer(fam, prm, cb, ch, eps, x, th, n, seed, buf)


@njit(cache=True)
def psi_point(fam, prm, cb, ch, eps, x, th, nbar, buf):
    r = fields(fam, prm, cb, ch, x, th)
    if fam == FAM_SKEW:
        return r[5]
    s = slope_with_buffer(fam, prm, cb, ch, eps, x, th, nbar, 0.0, buf)
    return r[5] + r[4] * s


@njit(cache=True)
def psi_array(fam, prm, cb, ch, eps, x, th, nbar):
    n = x.size
    out = np.empty(n)
    buf = np.empty((4, max(nbar, 1)))
    for i in range(n):
        out[i] = psi_point(fam, prm, cb, ch, eps, x[i], th[i], nbar, buf)
    return out


@njit(cache=True)
def slope_array(fam, prm, cb, ch, eps, x, th, n, seed):
    m = x.size
    out = np.empty(m)
    buf = np.empty((4, max(n, 1)))
    for i in range(m):
        out[i] = slope_with_buffer(fam, prm, cb, ch, eps, x[i], th[i], n, seed, buf)
    return out


# ---------------------------------------------------------------------------
# inverse branches and periodic points of a fiber
# ---------------------------------------------------------------------------

@njit(cache=True)
def fiber_preimages(fam, prm, cb, ch, th, targets, tol):
    """Solve ``f(x, theta) = y`` on [0, 1] for increasing lifted targets ``y``.

    The lift is increasing on [0, 1], so each target has exactly one
    solution; safeguarded Newton iterations keep the bracket.
    """
    n = targets.size
    out = np.empty(n)
    for i in range(n):
        y = targets[i]
        lo = 0.0
        hi = 1.0
        x = 0.5
        for it in range(200):
            r = fields(fam, prm, cb, ch, x, th)
            g = r[0] - y
            if g == 0.0:
                break
            if g > 0.0:
                hi = x
            else:
                lo = x
            if hi - lo < tol:
                break
            xn = x - g / r[2]
            if xn < lo or xn > hi:
                xn = 0.5 * (lo + hi)
            if abs(xn - x) < tol:
                x = xn
                break
            x = xn
        out[i] = x
    return out


@njit(cache=True)
def fiber_lift_power(fam, prm, cb, ch, th, x, p):
    """Lifted ``f_theta^p(x)`` and its derivative."""
    y = x
    dy = 1.0
    for _ in range(p):
        r = fields(fam, prm, cb, ch, y, th)
        dy *= r[2]
        y = r[0]
    return y, dy


@njit(cache=True)
def periodic_points(fam, prm, cb, ch, th, p, degree, tol):
    """All solutions of ``f_theta^p(x) = x mod 1`` in [0, 1).

    ``G(x) = F^p(x) - x`` increases by ``degree**p - 1`` on [0, 1]; there is
    one root per integer value crossed.
    """
    count = int(round(degree ** p)) - 1
    g0, _ = fiber_lift_power(fam, prm, cb, ch, th, 0.0, p)
    m0 = math.ceil(g0)
    out = np.empty(count)
    span = float(count)
    for j in range(count):
        m = m0 + j
        lo = 0.0
        hi = 1.0
        x = (m - g0) / span
        if x < 0.0 or x > 1.0:
            x = 0.5
        for it in range(300):
            y, dy = fiber_lift_power(fam, prm, cb, ch, th, x, p)
            g = y - x - m
            if g == 0.0:
                break
            if g > 0.0:
                hi = x
            else:
                lo = x
            if hi - lo < tol:
                break
            xn = x - g / (dy - 1.0)
            if xn < lo or xn > hi:
                xn = 0.5 * (lo + hi)
            if abs(xn - x) < tol:
                x = xn
                break
            x = xn
        r, _ = wrap(x)
        out[j] = r
    return out


@njit(cache=True)
def orbit_records(fam, prm, cb, ch, th, pts, p, tol):
    """Minimal period, leader flag and orbit average of omega for each point."""
    n = pts.size
    minper = np.zeros(n, dtype=np.int64)
    leader = np.zeros(n, dtype=np.bool_)
    avg = np.zeros(n)
    for i in range(n):
        x0 = pts[i]
        x = x0
        acc = 0.0
        is_min = True
        q = 0
        for k in range(1, p + 1):
            fl, w = fast_and_drive(fam, prm, cb, ch, x, th)
            acc += w
            x, _ = wrap(fl)
            d = abs(x - x0)
            d = min(d, 1.0 - d)
            if d < tol:
                q = k
                break
            if x < x0:
                is_min = False
        minper[i] = q
        leader[i] = is_min and q > 0
        avg[i] = acc / q if q > 0 else np.nan
    return minper, leader, avg


# ---------------------------------------------------------------------------
# ensemble evolution
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def evolve_particles(fam, prm, cb, ch, eps, x, th, wind, zeta, pid, seed, step0,
                     nsteps, stride, nbar, jscale, rec_theta, rec_zeta):
    """Advance particles in place and record lifted theta and zeta.

    ``rec_theta`` and ``rec_zeta`` have shape ``(nsteps // stride + 1, P)``;
    row ``r`` holds the state after ``r * stride`` steps.
    """
    P = x.size
    for i in prange(P):
        key = stream_key(seed, pid[i])
        buf = np.empty((4, max(nbar, 1)))
        xi = x[i]
        ti = th[i]
        wi = wind[i]
        zi = zeta[i]
        rec_theta[0, i] = ti + wi
        rec_zeta[0, i] = zi
        r = 1
        for k in range(nsteps):
            j = 0.0
            if jscale != 0.0:
                j = jscale * uniform(key, step0 + k)
            if fam == FAM_SKEW:
                # psi is omega_theta here, so one field evaluation serves both
                fv = fields(fam, prm, cb, ch, xi, ti)
                zi += eps * fv[5]
                xi, _ = wrap(fv[0] + j)
                ti, dk = wrap(ti + eps * fv[1])
            else:
                zi += eps * psi_point(fam, prm, cb, ch, eps, xi, ti, nbar, buf)
                xi, ti, dk = step(fam, prm, cb, ch, eps, xi, ti, j)
            wi += dk
            if (k + 1) % stride == 0:
                rec_theta[r, i] = ti + wi
                rec_zeta[r, i] = zi
                r += 1
        x[i] = xi
        th[i] = ti
        wind[i] = wi
        zeta[i] = zi


@njit(cache=True, parallel=True)
def observable_means(fam, prm, cb, ch, eps, x, th, pid, seed, nsteps, jscale,
                     weights, bth, bx, nblocks):
    """Block sums of ``weights[w] * B(F^n p)`` for n = 0..nsteps.

    ``B(x, theta) = Bth(theta) * Bx(x)`` with Fourier tables ``bth``, ``bx``
    (an empty table means the factor is 1).  ``weights`` has one row per
    weighting.  Particles are split into ``nblocks`` contiguous blocks;
    the per-block sums do not depend on the number of threads.

    Returns an array of shape ``(nweights, nblocks, nsteps + 1)``.
    """
    P = x.size
    nw = weights.shape[0]
    out = np.zeros((nw, nblocks, nsteps + 1))
    bsize = (P + nblocks - 1) // nblocks
    for b in prange(nblocks):
        i0 = b * bsize
        i1 = min(P, i0 + bsize)
        row = np.zeros((nw, nsteps + 1))
        for i in range(i0, i1):
            key = stream_key(seed, pid[i])
            xi = x[i]
            ti = th[i]
            for k in range(nsteps + 1):
                v = 1.0
                if bth.shape[0] > 0:
                    v *= fourier_value(bth, ti)
                if bx.shape[0] > 0:
                    v *= fourier_value(bx, xi)
                for w in range(nw):
                    row[w, k] += weights[w, i] * v
                if k < nsteps:
                    j = 0.0
                    if jscale != 0.0:
                        j = jscale * uniform(key, k)
                    xi, ti, _ = step(fam, prm, cb, ch, eps, xi, ti, j)
        for w in range(nw):
            for k in range(nsteps + 1):
                out[w, b, k] = row[w, k]
    return out


@njit(cache=True, parallel=True)
def occupation(fam, prm, cb, ch, eps, x, th, pid, seed, step0, nsteps, jscale,
               burn, sample_every, nbx, nbt, nblocks):
    """Per-block 2-D occupation counts of ``(x, theta)`` after ``burn`` steps.

    Particles are advanced in place.  Counts have shape
    ``(nblocks, nbx, nbt)``.
    """
    P = x.size
    out = np.zeros((nblocks, nbx, nbt), dtype=np.int64)
    bsize = (P + nblocks - 1) // nblocks
    for b in prange(nblocks):
        i0 = b * bsize
        i1 = min(P, i0 + bsize)
        for i in range(i0, i1):
            key = stream_key(seed, pid[i])
            xi = x[i]
            ti = th[i]
            for k in range(nsteps + 1):
                if k >= burn and (k - burn) % sample_every == 0:
                    bx_ = min(int(xi * nbx), nbx - 1)
                    bt_ = min(int(ti * nbt), nbt - 1)
                    out[b, bx_, bt_] += 1
                if k < nsteps:
                    j = 0.0
                    if jscale != 0.0:
                        j = jscale * uniform(key, step0 + k)
                    xi, ti, _ = step(fam, prm, cb, ch, eps, xi, ti, j)
            x[i] = xi
            th[i] = ti
    return out


@njit(cache=True)
def _which_sink(t, centers, radius):
    for c in range(centers.size):
        d = abs(t - centers[c])
        d = min(d, 1.0 - d)
        if d < radius:
            return c
    return -1


@njit(cache=True, parallel=True)
def sink_visits(fam, prm, cb, ch, eps, x, th, pid, seed, nsteps, jscale,
                centers, radius, debounce, burn, nbins, sample_every):
    """Track confirmed sink visits, passage times and an occupation histogram.

    A particle is confirmed at sink ``c`` after ``debounce`` consecutive
    samples inside ``B(centers[c], radius)``.  A passage is a confirmed
    arrival at a sink different from the last confirmed one; its duration
    is measured from the previous confirmed arrival.

    Returns
    -------
    hist : (P, nbins) occupation counts of theta after ``burn`` steps
    npass, tsum : (P,) number of passages and sum of their durations
    last : (P,) index of the last confirmed sink (-1 if none)
    first_conf : (P,) sink confirmed first (-1 if none)
    """
    P = x.size
    hist = np.zeros((P, nbins), dtype=np.int64)
    npass = np.zeros(P, dtype=np.int64)
    tsum = np.zeros(P)
    last = np.full(P, -1, dtype=np.int64)
    first_conf = np.full(P, -1, dtype=np.int64)
    for i in prange(P):
        key = stream_key(seed, pid[i])
        xi = x[i]
        ti = th[i]
        cur = -1
        run = 0
        conf = -1
        t_conf = 0
        for k in range(nsteps + 1):
            if k % sample_every == 0:
                c = _which_sink(ti, centers, radius)
                if c >= 0 and c == cur:
                    run += 1
                elif c >= 0:
                    cur = c
                    run = 1
                else:
                    cur = -1
                    run = 0
                if run == debounce and cur != conf:
                    if conf >= 0:
                        npass[i] += 1
                        tsum[i] += k - t_conf
                    else:
                        first_conf[i] = cur
                    conf = cur
                    t_conf = k
                if k >= burn:
                    b = int(ti * nbins)
                    if b >= nbins:
                        b = nbins - 1
                    hist[i, b] += 1
            if k < nsteps:
                j = 0.0
                if jscale != 0.0:
                    j = jscale * uniform(key, k)
                xi, ti, _ = step(fam, prm, cb, ch, eps, xi, ti, j)
        last[i] = conf
        x[i] = xi
        th[i] = ti
    return hist, npass, tsum, last, first_conf


# ---------------------------------------------------------------------------
# stochastic comparison process
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def euler_maruyama(grid_drift, grid_sigma, eps, theta0, nsteps, dt, seed, pid, stride):
    """Euler-Maruyama paths of ``dw = b dt + sqrt(eps) s dB`` on the circle.

    Drift and diffusion are read from periodic tables by linear
    interpolation.  Returns lifted positions sampled every ``stride``.
    """
    P = theta0.size
    M = grid_drift.size
    nrec = nsteps // stride + 1
    out = np.empty((nrec, P))
    sq = math.sqrt(eps * dt)
    for i in prange(P):
        key = stream_key(seed, pid[i])
        w = theta0[i]
        out[0, i] = w
        r = 1
        for k in range(nsteps):
            u = (w - math.floor(w)) * M
            j0 = int(u)
            if j0 >= M:
                j0 = M - 1
            fr = u - j0
            j1 = j0 + 1
            if j1 == M:
                j1 = 0
            b = grid_drift[j0] * (1.0 - fr) + grid_drift[j1] * fr
            s = grid_sigma[j0] * (1.0 - fr) + grid_sigma[j1] * fr
            w = w + b * dt + sq * s * normal(key, k)
            if (k + 1) % stride == 0:
                out[r, i] = w
                r += 1
    return out


# ---------------------------------------------------------------------------
# orbits with stored partials
# ---------------------------------------------------------------------------

@njit(cache=True)
def orbit(fam, prm, cb, ch, eps, x, th, n, jit):
    """Forward orbit of length ``n`` with the six fields at every point.

    Returns ``xs, ths, wind, F`` where ``xs[k], ths[k]`` is the k-th
    iterate (k = 0..n), ``wind[k]`` the accumulated theta winding and
    ``F[:, k]`` the fields at the k-th iterate.
    """
    xs = np.empty(n + 1)
    ths = np.empty(n + 1)
    wind = np.zeros(n + 1)
    F = np.empty((6, n + 1))
    xi = x
    ti = th
    wk = 0.0
    for k in range(n + 1):
        xs[k] = xi
        ths[k] = ti
        wind[k] = wk
        r = fields(fam, prm, cb, ch, xi, ti)
        for j in range(6):
            F[j, k] = r[j]
        if k < n:
            xi, ti, dk = step(fam, prm, cb, ch, eps, xi, ti, jit[k])
            wk += dk
    return xs, ths, wind, F


@njit(cache=True)
def backward_slopes(F, eps, n, seed):
    """Slopes ``s_{n-k}(p_k)`` for k = 0..n along a stored orbit."""
    s = np.empty(n + 1)
    s[n] = seed
    for k in range(n - 1, -1, -1):
        s[k] = ((1.0 + eps * F[5, k]) * s[k + 1] - F[3, k]) / (F[2, k] - eps * F[4, k] * s[k + 1])
    return s


# ---------------------------------------------------------------------------
# inverse-branch orbits (used by the holonomy machinery)
# ---------------------------------------------------------------------------

@njit(cache=True)
def pullback(fam, prm, cb, ch, eps, xs, ths, x_tip, th_tip, n, out_x, out_t):
    """True orbit ending at ``(x_tip, th_tip)`` along the branches of a reference.

    ``xs, ths`` is a reference orbit (theta lifted) whose inverse branches
    are followed; each backward step solves ``F(x, theta) = (x', theta')``
    by Newton's method started from the reference shifted by the current
    offset.  The orbit is written to ``out_x, out_t`` (k = 0..n) and the
    largest final Newton correction is returned.
    """
    out_x[n] = x_tip
    out_t[n] = th_tip
    worst = 0.0
    for k in range(n - 1, -1, -1):
        xp = out_x[k + 1]
        tp = out_t[k + 1]
        dx = xp - xs[k + 1]
        dx -= math.floor(dx + 0.5)
        r = fields(fam, prm, cb, ch, xs[k], ths[k])
        x = xs[k] + dx / r[2]
        th = ths[k] + (tp - ths[k + 1])
        corr = 0.0
        for _ in range(8):
            r = fields(fam, prm, cb, ch, x, th)
            r1 = r[0] - xp
            r1 -= math.floor(r1 + 0.5)
            r2 = th + eps * r[1] - tp
            a = r[2]
            b = r[3]
            c = eps * r[4]
            d = 1.0 + eps * r[5]
            det = a * d - b * c
            ddx = (d * r1 - b * r2) / det
            ddt = (a * r2 - c * r1) / det
            x -= ddx
            th -= ddt
            corr = abs(ddx) + abs(ddt)
            if corr < 1e-16:
                break
        worst = max(worst, corr)
        out_x[k] = x
        out_t[k] = th
    return worst


@njit(cache=True)
def curve_expansion(fam, prm, cb, ch, eps, xs, ths, n, u0):
    """Expansion of the x-coordinate along the image of a curve.

    The tangent ``(1, eps u)`` is pushed along the orbit ``xs, ths``.
    Returns ``(sum log f_x, sum log(f_x + eps f_theta u_k), u_n)``.
    """
    u = u0
    lg = 0.0
    lc = 0.0
    for k in range(n):
        r = fields(fam, prm, cb, ch, xs[k], ths[k])
        ex = r[2] + eps * r[3] * u
        lg += math.log(r[2])
        lc += math.log(ex)
        u = (r[4] + (1.0 + eps * r[5]) * u) / ex
    return lg, lc, u
