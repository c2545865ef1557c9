"""Hot numeric kernels, compiled with numba when enabled.

Everything here is plain-array code: the same source runs interpreted when
CONFRONTIER_NUMBA=0 (kernels_np provides vectorized batch twins for the paths
where interpretation would hurt). No python objects cross these boundaries.
"""

import math

import numpy as np

from ._accel import njit, prange

# SplitMix64 constants. The generator is the SplitMix64 output function applied
# to a stream-salted counter, so draw i of stream s is O(1) random access and
# the sequence is identical on every platform.
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
U11 = np.uint64(11)
U27 = np.uint64(27)
U30 = np.uint64(30)
U31 = np.uint64(31)
U33 = np.uint64(33)
ONE64 = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0  # 2**-53

SQRT2 = math.sqrt(2.0)

# PIT probabilities are clamped to keep the normal quantile finite; values this
# deep in a tail saturate the Berkowitz statistic regardless.
PCLAMP = 1e-15


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> U30)) * MIX1
    z = (z ^ (z >> U27)) * MIX2
    return z ^ (z >> U31)


@njit(cache=True)
def stream_origin(seed, stream):
    """Base state for a (seed, stream) pair; draws are mix64(base + i*GOLDEN)."""
    return seed ^ mix64(stream * GOLDEN + ONE64)


@njit(cache=True)
def uniform_at(base, i):
    v = mix64(base + (i + ONE64) * GOLDEN)
    return (np.float64(v >> U11) + 0.5) * INV53


@njit(cache=True)
def fill_uniforms(seed, stream, start, out):
    base = stream_origin(seed, stream)
    for j in range(out.shape[0]):
        out[j] = uniform_at(base, start + np.uint64(j))


@njit(cache=True)
def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit(cache=True)
def norm_sf(x):
    return 0.5 * math.erfc(x / SQRT2)


@njit(cache=True)
def norm_ppf(p):
    """Inverse standard-normal CDF, Wichura's PPND16 rational approximation."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    if q < 0.0:
        return -val
    return val


@njit(cache=True)
def fill_normals(seed, stream, start, out):
    base = stream_origin(seed, stream)
    for j in range(out.shape[0]):
        out[j] = norm_ppf(uniform_at(base, start + np.uint64(j)))


@njit(cache=True)
def horizon_sums(series, h):
    """Overlapping h-period sums; out[j] = series[j] + ... + series[j+h-1]."""
    t = series.shape[0]
    out = np.empty(t - h + 1)
    acc = 0.0
    for j in range(h):
        acc += series[j]
    out[0] = acc
    for j in range(1, t - h + 1):
        acc += series[j + h - 1] - series[j - 1]
        out[j] = acc
    return out


@njit(cache=True)
def ecdf_prob(sorted_r, mean, sd, r):
    """Forecast probability of r under the smoothed empirical CDF.

    Interior points interpolate between adjacent order statistics; beyond the
    sample extremes the tail mass 1/(2(n+1)) is spread with a normal shape
    anchored at the extreme observation.
    """
    n = sorted_r.shape[0]
    lo = sorted_r[0]
    hi = sorted_r[n - 1]
    denom = np.float64(n + 1)
    if sd < 1e-300:
        sd = 1e-300
    if r <= lo:
        tail = norm_cdf((lo - mean) / sd)
        if tail < 1e-300:
            tail = 1e-300
        p = norm_cdf((r - mean) / sd) / tail / (2.0 * denom)
        if p < PCLAMP:
            p = PCLAMP
        return p
    if r >= hi:
        tail = norm_sf((hi - mean) / sd)
        if tail < 1e-300:
            tail = 1e-300
        p = 1.0 - norm_sf((r - mean) / sd) / tail / (2.0 * denom)
        if p > 1.0 - PCLAMP:
            p = 1.0 - PCLAMP
        return p
    # count strictly below; tied order statistics collapse because the bracket
    # [below, at-or-above] always spans strictly increasing values
    a = 0
    b = n
    while a < b:
        mid = (a + b) // 2
        if sorted_r[mid] < r:
            a = mid + 1
        else:
            b = mid
    count = a
    left = sorted_r[count - 1]
    right = sorted_r[count]
    return (np.float64(count) + 0.5 + (r - left) / (right - left)) / denom


@njit(cache=True)
def berkowitz_stat(y):
    """Likelihood ratio of N(mu,sigma2) against N(0,1); returns (stat, mu, s2)."""
    k = y.shape[0]
    s = 0.0
    ssq = 0.0
    for j in range(k):
        s += y[j]
        ssq += y[j] * y[j]
    mu = s / k
    s2 = 0.0
    for j in range(k):
        d = y[j] - mu
        s2 += d * d
    s2 /= k
    if s2 < 1e-300:
        s2 = 1e-300
    stat = ssq - k - k * math.log(s2)
    if stat < 0.0:
        stat = 0.0
    return stat, mu, s2


@njit(cache=True)
def berkowitz_ewma_stat(y, gamma):
    """Weight-normalized LR statistic with weights gamma**(K-k), newest heaviest."""
    k = y.shape[0]
    if gamma == 1.0:
        stat, mu, s2 = berkowitz_stat(y)
        return stat / k, mu, s2
    wsum = 0.0
    ws = 0.0
    wssq = 0.0
    w = 1.0
    for j in range(k - 1, -1, -1):
        wsum += w
        ws += w * y[j]
        wssq += w * y[j] * y[j]
        w *= gamma
    mu = ws / wsum
    s2 = wssq / wsum - mu * mu
    if s2 < 1e-300:
        s2 = 1e-300
    stat = wssq / wsum - 1.0 - math.log(s2)
    if stat < 0.0:
        stat = 0.0
    return stat, mu, s2


@njit(cache=True)
def _sorted_remove(w, count, value):
    a = 0
    b = count
    while a < b:
        mid = (a + b) // 2
        if w[mid] < value:
            a = mid + 1
        else:
            b = mid
    for j in range(a, count - 1):
        w[j] = w[j + 1]
    return count - 1


@njit(cache=True)
def _sorted_insert(w, count, value):
    a = 0
    b = count
    while a < b:
        mid = (a + b) // 2
        if w[mid] < value:
            a = mid + 1
        else:
            b = mid
    for j in range(count, a, -1):
        w[j] = w[j - 1]
    w[a] = value
    return count + 1


@njit(cache=True)
def pit_null_series(z, m, h, k, step, overhang, theta, y_out):
    """PIT z-series for one null replication: K rolling origins over one path.

    Origin j's in-sample window is the m periods ending at period m-1 + j*step;
    the cdf sample is every h-period sum drawn from those m periods plus the
    first `overhang` periods beyond the origin (the sums already begun there).
    Its out-of-sample value is the next h-period sum, scaled by theta (power
    experiments scale only the realized return, never the history).
    """
    hs = horizon_sums(z, h)
    nh = hs.shape[0]
    ps = np.empty(nh + 1)
    ps2 = np.empty(nh + 1)
    ps[0] = 0.0
    ps2[0] = 0.0
    for j in range(nh):
        ps[j + 1] = ps[j] + hs[j]
        ps2[j + 1] = ps2[j] + hs[j] * hs[j]
    n = m - h + 1 + overhang
    w = np.empty(n)
    for j in range(n):
        w[j] = hs[j]
    w = np.sort(w)
    for j in range(k):
        s = j * step
        if j > 0:
            cnt = n
            for t in range(step):
                cnt = _sorted_remove(w, cnt, hs[s - step + t])
            for t in range(step):
                cnt = _sorted_insert(w, cnt, hs[s + n - step + t])
        mean = (ps[s + n] - ps[s]) / n
        var = (ps2[s + n] - ps2[s]) / n - mean * mean
        if var < 0.0:
            var = 0.0
        r_out = theta * hs[s + m]
        p = ecdf_prob(w, mean, math.sqrt(var), r_out)
        y_out[j] = norm_ppf(p)


@njit(cache=True, parallel=True)
def calibrate_stats(seed, stream0, reps, m, k, h, step, overhang, theta, gamma,
                    use_ewma):
    """Null Berkowitz statistics for `reps` replications; stream = stream0 + rep."""
    n_periods = m + (k - 1) * step + h
    out = np.empty(reps)
    for r in prange(reps):
        z = np.empty(n_periods)
        fill_normals(seed, stream0 + np.uint64(r), np.uint64(0), z)
        y = np.empty(k)
        pit_null_series(z, m, h, k, step, overhang, theta, y)
        if use_ewma:
            stat, _, _ = berkowitz_ewma_stat(y, gamma)
        else:
            stat, _, _ = berkowitz_stat(y)
        out[r] = stat
    return out


@njit(cache=True)
def lu_solve_checked(a, rhs):
    """Partial-pivot LU solve returning (x, ok); ok=False flags singularity."""
    n = a.shape[0]
    lu = a.copy()
    x = rhs.copy()
    piv_ok = True
    scale = 0.0
    for i in range(n):
        for j in range(n):
            v = abs(lu[i, j])
            if v > scale:
                scale = v
    if scale == 0.0:
        return x, False
    for col in range(n):
        p = col
        vmax = abs(lu[col, col])
        for i in range(col + 1, n):
            v = abs(lu[i, col])
            if v > vmax:
                vmax = v
                p = i
        if vmax <= 1e-13 * scale:
            piv_ok = False
            break
        if p != col:
            for j in range(n):
                tmp = lu[col, j]
                lu[col, j] = lu[p, j]
                lu[p, j] = tmp
            tmp = x[col]
            x[col] = x[p]
            x[p] = tmp
        inv = 1.0 / lu[col, col]
        for i in range(col + 1, n):
            f = lu[i, col] * inv
            if f != 0.0:
                lu[i, col] = f
                for j in range(col + 1, n):
                    lu[i, j] -= f * lu[col, j]
                x[i] -= f * x[col]
            else:
                lu[i, col] = 0.0
    if not piv_ok:
        return x, False
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(i + 1, n):
            acc -= lu[i, j] * x[j]
        x[i] = acc / lu[i, i]
    return x, True


@njit(cache=True)
def qp_box_eq(gmat, gvec, amat, bvec, lo, hi, x0, max_iter, ktol):
    """Primal active-set solve of min 0.5 x'Gx + g'x, Ax = b, lo <= x <= hi.

    x0 must satisfy the equalities and box. Bland's rule (lowest index on both
    the drop and the blocking choice) guards against cycling. Returns
    (x, lam, wset, status): wset holds -1/0/+1 for lower/free/upper, status 0
    means the KKT conditions hold at ktol, 1 means the iteration cap hit.
    """
    n = x0.shape[0]
    m = amat.shape[0]
    x = x0.copy()
    for i in range(n):
        if x[i] < lo[i]:
            x[i] = lo[i]
        if x[i] > hi[i]:
            x[i] = hi[i]
    wset = np.zeros(n, dtype=np.int64)
    btol = 1e-12
    for i in range(n):
        if x[i] - lo[i] <= btol:
            x[i] = lo[i]
            wset[i] = -1
        elif hi[i] - x[i] <= btol:
            x[i] = hi[i]
            wset[i] = 1
    lam = np.zeros(m)
    free_idx = np.empty(n, dtype=np.int64)
    status = 1
    for _ in range(max_iter):
        f = 0
        for i in range(n):
            if wset[i] == 0:
                free_idx[f] = i
                f += 1
        xt = x.copy()
        solved = False
        if f > 0:
            dim = f + m
            kkt = np.zeros((dim, dim))
            rhs = np.zeros(dim)
            for a_ in range(f):
                ia = free_idx[a_]
                for b_ in range(f):
                    kkt[a_, b_] = gmat[ia, free_idx[b_]]
                for r_ in range(m):
                    kkt[a_, f + r_] = -amat[r_, ia]
                    kkt[f + r_, a_] = amat[r_, ia]
                acc = gvec[ia]
                for i in range(n):
                    if wset[i] != 0:
                        acc += gmat[ia, i] * x[i]
                rhs[a_] = -acc
            for r_ in range(m):
                acc = bvec[r_]
                for i in range(n):
                    if wset[i] != 0:
                        acc -= amat[r_, i] * x[i]
                rhs[f + r_] = acc
            sol, ok = lu_solve_checked(kkt, rhs)
            if ok:
                for a_ in range(f):
                    xt[free_idx[a_]] = sol[a_]
                for r_ in range(m):
                    lam[r_] = sol[f + r_]
                solved = True
        if not solved:
            # rank-deficient working set: estimate multipliers and try a drop
            grad = gmat @ x + gvec
            ata = amat @ amat.T
            rhs2 = amat @ grad
            sol2, ok2 = lu_solve_checked(ata, rhs2)
            if ok2:
                lam = sol2
        pmax = 0.0
        for i in range(n):
            v = abs(xt[i] - x[i])
            if v > pmax:
                pmax = v
        xscale = 1.0
        for i in range(n):
            if abs(x[i]) > xscale:
                xscale = abs(x[i])
        if (not solved) or pmax <= 1e-13 * xscale:
            grad = gmat @ x + gvec
            drop = -1
            for i in range(n):
                if wset[i] == 0:
                    continue
                gi = grad[i]
                for r_ in range(m):
                    gi -= amat[r_, i] * lam[r_]
                if (wset[i] == -1 and gi < -ktol) or (wset[i] == 1 and gi > ktol):
                    drop = i
                    break
            if drop < 0:
                status = 0
                break
            wset[drop] = 0
            continue
        alpha = 1.0
        blk = -1
        blk_side = 0
        for a_ in range(f):
            i = free_idx[a_]
            p = xt[i] - x[i]
            if p > 1e-15:
                cand = (hi[i] - x[i]) / p
                if cand < alpha - 1e-15:
                    alpha = cand
                    blk = i
                    blk_side = 1
            elif p < -1e-15:
                cand = (lo[i] - x[i]) / p
                if cand < alpha - 1e-15:
                    alpha = cand
                    blk = i
                    blk_side = -1
        if alpha < 0.0:
            alpha = 0.0
        for a_ in range(f):
            i = free_idx[a_]
            x[i] += alpha * (xt[i] - x[i])
        if blk >= 0:
            x[blk] = hi[blk] if blk_side == 1 else lo[blk]
            wset[blk] = blk_side
    return x, lam, wset, status


@njit(cache=True)
def repair_to_equalities(x, amat, bvec, lo, hi, max_sweeps, rtol):
    """Move x onto {Az = b, lo <= z <= hi} in place; 0 on success.

    Primary solver: the projection of x onto the set is clip(x + A'lam) with
    lam solving the monotone piecewise-linear system A clip(x + A'lam) = b;
    a damped semismooth Newton on lam (Jacobian A_F A_F' over the free
    coordinates, ridge-regularized, steps clamped to a few box spans in
    primal units) finishes in a handful of iterations on regular faces. If
    it stalls on a degenerate face, alternating projections take over:
    always convergent when the set is nonempty, while an empty set shows up
    as residual stagnation and exits with status 1.
    """
    n = x.shape[0]
    m = amat.shape[0]
    c = x.copy()
    lam = np.zeros(m)
    lam_try = np.empty(m)
    xcur = np.empty(n)
    xtry = np.empty(n)
    g = np.empty(m)
    gtry = np.empty(m)
    amax = 0.0
    for r_ in range(m):
        for i in range(n):
            v = abs(amat[r_, i])
            if v > amax:
                amax = v
    ridge = 1e-12 * (1.0 + amax * amax)
    span = 0.0
    for i in range(n):
        if hi[i] - lo[i] > span:
            span = hi[i] - lo[i]
    if span <= 0.0:
        span = 1.0

    for i in range(n):
        v = c[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        xcur[i] = v
    gsq = 0.0
    gmax = 0.0
    for r_ in range(m):
        s = -bvec[r_]
        for i in range(n):
            s += amat[r_, i] * xcur[i]
        g[r_] = s
        gsq += s * s
        if abs(s) > gmax:
            gmax = abs(s)

    for _ in range(max_sweeps):
        if gmax <= rtol:
            for i in range(n):
                x[i] = xcur[i]
            return 0
        jmat = np.zeros((m, m))
        for i in range(n):
            v = c[i]
            for r_ in range(m):
                v += amat[r_, i] * lam[r_]
            if lo[i] < v < hi[i]:
                for r_ in range(m):
                    for s_ in range(m):
                        jmat[r_, s_] += amat[r_, i] * amat[s_, i]
        for r_ in range(m):
            jmat[r_, r_] += ridge
        dlam, ok = lu_solve_checked(jmat, -g)
        if not ok:
            dlam = np.linalg.lstsq(jmat, -g)[0]
        dz = 0.0
        for i in range(n):
            v = 0.0
            for r_ in range(m):
                v += amat[r_, i] * dlam[r_]
            if abs(v) > dz:
                dz = abs(v)
        if dz <= 0.0:
            break
        # a useful step never needs to travel more than the box itself
        scale = 4.0 * span / dz
        if scale < 1.0:
            for r_ in range(m):
                dlam[r_] *= scale
        t = 1.0
        accepted = False
        for _k in range(40):
            for r_ in range(m):
                lam_try[r_] = lam[r_] + t * dlam[r_]
            for i in range(n):
                v = c[i]
                for r_ in range(m):
                    v += amat[r_, i] * lam_try[r_]
                if v < lo[i]:
                    v = lo[i]
                elif v > hi[i]:
                    v = hi[i]
                xtry[i] = v
            gsq_try = 0.0
            gmax_try = 0.0
            for r_ in range(m):
                s = -bvec[r_]
                for i in range(n):
                    s += amat[r_, i] * xtry[i]
                gtry[r_] = s
                gsq_try += s * s
                if abs(s) > gmax_try:
                    gmax_try = abs(s)
            if gsq_try <= (1.0 - 1e-4 * t) * gsq:
                accepted = True
                for r_ in range(m):
                    lam[r_] = lam_try[r_]
                    g[r_] = gtry[r_]
                for i in range(n):
                    xcur[i] = xtry[i]
                gsq = gsq_try
                gmax = gmax_try
                break
            t *= 0.5
        if not accepted:
            break
    if gmax <= rtol:
        for i in range(n):
            x[i] = xcur[i]
        return 0

    # alternating projections from the best point so far
    aat = amat @ amat.T
    for i in range(n):
        xtry[i] = xcur[i]
    last_block = gmax
    for sweep in range(100 * max_sweeps):
        for r_ in range(m):
            s = -bvec[r_]
            for i in range(n):
                s += amat[r_, i] * xtry[i]
            g[r_] = s
        sol, ok = lu_solve_checked(aat, -g)
        if not ok:
            sol = np.linalg.lstsq(aat, -g)[0]
        for i in range(n):
            v = xtry[i]
            for r_ in range(m):
                v += amat[r_, i] * sol[r_]
            if v < lo[i]:
                v = lo[i]
            elif v > hi[i]:
                v = hi[i]
            xtry[i] = v
        gmax = 0.0
        for r_ in range(m):
            s = -bvec[r_]
            for i in range(n):
                s += amat[r_, i] * xtry[i]
            if abs(s) > gmax:
                gmax = abs(s)
        if gmax <= rtol:
            for i in range(n):
                x[i] = xtry[i]
            return 0
        if sweep % 50 == 49:
            if gmax > 0.9 * last_block:
                return 1  # stagnated: empty or pathologically thin set
            last_block = gmax
    return 1


@njit(cache=True)
def grid_cell_solve(sigma, mu, r_target, sd2, upper, x0, max_iter):
    """Min weight dispersion at an exact (return, variance) coordinate.

    min x'x  s.t.  1'x = 1, mu'x = r_target, x' sigma x = sd2, 0 <= x <= upper.
    The quadratic equality is linearized each round with an exact L1 merit;
    returns (x, 0) on convergence, (x0, 1) when no feasible improvement exists.
    """
    n = x0.shape[0]
    x = x0.copy()
    lo = np.zeros(n)
    hi = np.empty(n)
    for i in range(n):
        hi[i] = upper
    gmat = np.eye(n) * 2.0
    gvec = np.zeros(n)
    amat = np.empty((3, n))
    bvec = np.empty(3)
    for i in range(n):
        amat[0, i] = 1.0
        amat[1, i] = mu[i]
    htol = 1e-7 * sd2
    if htol < 1e-16:
        htol = 1e-16
    rho = 1.0
    best = x0.copy()
    best_f = 1e300
    have_best = False
    stall = 0
    for _ in range(max_iter):
        sx = sigma @ x
        h = x @ sx - sd2
        f_cur = x @ x
        if abs(h) <= htol:
            if f_cur < best_f:
                best_f = f_cur
                best = x.copy()
                have_best = True
        for i in range(n):
            amat[2, i] = 2.0 * sx[i]
        bvec[0] = 1.0
        bvec[1] = r_target
        a3x = amat[2] @ x
        # partial correction: shrink the linearized target until a feasible
        # start for the subproblem exists
        z = x.copy()
        t = 1.0
        feasible = False
        for _k in range(7):
            bvec[2] = a3x - t * h
            z = x.copy()
            if repair_to_equalities(z, amat, bvec, lo, hi, 50, 1e-9) == 0:
                feasible = True
                break
            t *= 0.5
        if not feasible:
            break
        xs, lam, _, qstat = qp_box_eq(gmat, gvec, amat, bvec, lo, hi, z,
                                      400, 1e-9)
        if qstat != 0:
            break
        lam_h = abs(lam[2])
        if rho < 2.0 * lam_h + 1e-8:
            rho = 2.0 * lam_h + 1e-8
        d = xs - x
        dmax = 0.0
        for i in range(n):
            if abs(d[i]) > dmax:
                dmax = abs(d[i])
        if dmax <= 1e-12 and abs(h) <= htol:
            if f_cur < best_f:
                best_f = f_cur
                best = x.copy()
                have_best = True
            break
        sd_ = sigma @ d
        dsd = d @ sd_
        xsd = 2.0 * (sx @ d)
        merit0 = f_cur + rho * abs(h)
        alpha = 1.0
        accepted = False
        for _k in range(7):
            xn_f = 0.0
            for i in range(n):
                v = x[i] + alpha * d[i]
                xn_f += v * v
            hn = h + alpha * xsd + alpha * alpha * dsd
            if xn_f + rho * abs(hn) < merit0 - 1e-14:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            stall += 1
            if stall >= 3:
                break
            continue
        stall = 0
        for i in range(n):
            x[i] += alpha * d[i]
    sx = sigma @ x
    h = x @ sx - sd2
    if abs(h) <= htol:
        if x @ x < best_f:
            best = x.copy()
            have_best = True
    if have_best:
        return best, 0
    return x0.copy(), 1


@njit(cache=True)
def window_summary_pit(series, h, r_out):
    """(p, mean, sd, hsums) for one in-sample window and a realized return."""
    hs = horizon_sums(series, h)
    n = hs.shape[0]
    mean = 0.0
    for j in range(n):
        mean += hs[j]
    mean /= n
    var = 0.0
    for j in range(n):
        d = hs[j] - mean
        var += d * d
    var /= n
    srt = np.sort(hs)
    p = ecdf_prob(srt, mean, math.sqrt(var), r_out)
    return p, mean, math.sqrt(var), hs
