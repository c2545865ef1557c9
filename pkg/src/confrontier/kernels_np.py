"""Vectorized numpy twins of the hot kernels.

These carry the batch work when numba is off. They follow the same arithmetic
as kernels.py (sequential recurrences run along the replication axis), so the
two paths agree to rounding noise; within a path results are bit-stable.
"""

import math

import numpy as np

from .kernels import GOLDEN, INV53, MIX1, MIX2, PCLAMP

_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_ONE = np.uint64(1)


def mix64_np(z):
    # uint64 wraparound is the point; silence numpy's overflow chatter
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U30)) * MIX1
        z = (z ^ (z >> _U27)) * MIX2
        return z ^ (z >> _U31)


def stream_origin_np(seed, streams):
    with np.errstate(over="ignore"):
        return np.uint64(seed) ^ mix64_np(streams * GOLDEN + _ONE)


def uniforms_np(seed, stream, start, n):
    base = stream_origin_np(np.uint64(seed), np.uint64(stream))
    idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        v = mix64_np(base + idx * GOLDEN)
    return ((v >> _U11).astype(np.float64) + 0.5) * INV53


def norm_ppf_np(p):
    """Vectorized PPND16; same polynomial forms as the scalar kernel."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if np.any(central):
        r = 0.180625 - q[central] * q[central]
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        out[central] = q[central] * num / den
    tail = ~central
    if np.any(tail):
        pt = p[tail]
        qt = q[tail]
        r = np.sqrt(-np.log(np.where(qt < 0.0, pt, 1.0 - pt)))
        near = r <= 5.0
        val = np.empty_like(r)
        if np.any(near):
            rn = r[near] - 1.6
            num = (((((((7.74545014278341407640e-4 * rn + 2.27238449892691845833e-2) * rn
                        + 2.41780725177450611770e-1) * rn + 1.27045825245236838258e0) * rn
                      + 3.64784832476320460504e0) * rn + 5.76949722146069140550e0) * rn
                    + 4.63033784615654529590e0) * rn + 1.42343711074968357734e0)
            den = (((((((1.05075007164441684324e-9 * rn + 5.47593808499534494600e-4) * rn
                        + 1.51986665636164571966e-2) * rn + 1.48103976427480074590e-1) * rn
                      + 6.89767334985100004550e-1) * rn + 1.67638483018380384940e0) * rn
                    + 2.05319162663775882187e0) * rn + 1.0)
            val[near] = num / den
        far = ~near
        if np.any(far):
            rf = r[far] - 5.0
            num = (((((((2.01033439929228813265e-7 * rf + 2.71155556874348757815e-5) * rf
                        + 1.24266094738807843860e-3) * rf + 2.65321895265761230930e-2) * rf
                      + 2.96560571828504891230e-1) * rf + 1.78482653991729133580e0) * rf
                    + 5.46378491116411436990e0) * rf + 6.65790464350110377720e0)
            den = (((((((2.04426310338993978564e-15 * rf + 1.42151175831644588870e-7) * rf
                        + 1.84631831751005468180e-5) * rf + 7.86869131145613259100e-4) * rf
                      + 1.48753612908506148525e-2) * rf + 1.36929880922735805310e-1) * rf
                    + 5.99832206555887937690e-1) * rf + 1.0)
            val[far] = num / den
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def normals_np(seed, stream, start, n):
    return norm_ppf_np(uniforms_np(seed, stream, start, n))


def _norm_cdf_scalar(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _norm_sf_scalar(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _ecdf_batch(windows_sorted, means, sds, r_out):
    """Vectorized interior formula with a scalar loop for the rare tail hits."""
    reps, n = windows_sorted.shape
    denom = float(n + 1)
    lo = windows_sorted[:, 0]
    hi = windows_sorted[:, -1]
    p = np.empty(reps)
    interior = (r_out > lo) & (r_out < hi)
    if np.any(interior):
        ws = windows_sorted[interior]
        ro = r_out[interior]
        count = (ws < ro[:, None]).sum(axis=1)
        left = ws[np.arange(ws.shape[0]), count - 1]
        right = ws[np.arange(ws.shape[0]), count]
        p[interior] = (count + 0.5 + (ro - left) / (right - left)) / denom
    for i in np.flatnonzero(~interior):
        sd = sds[i] if sds[i] >= 1e-300 else 1e-300
        if r_out[i] <= lo[i]:
            tail = _norm_cdf_scalar((lo[i] - means[i]) / sd)
            tail = tail if tail >= 1e-300 else 1e-300
            v = _norm_cdf_scalar((r_out[i] - means[i]) / sd) / tail / (2.0 * denom)
            p[i] = v if v >= PCLAMP else PCLAMP
        else:
            tail = _norm_sf_scalar((hi[i] - means[i]) / sd)
            tail = tail if tail >= 1e-300 else 1e-300
            v = 1.0 - _norm_sf_scalar((r_out[i] - means[i]) / sd) / tail / (2.0 * denom)
            p[i] = v if v <= 1.0 - PCLAMP else 1.0 - PCLAMP
    return p


def _berkowitz_batch(y):
    k = y.shape[1]
    mu = y.mean(axis=1)
    s2 = np.maximum(((y - mu[:, None]) ** 2).mean(axis=1), 1e-300)
    stat = (y * y).sum(axis=1) - k - k * np.log(s2)
    return np.maximum(stat, 0.0)


def _berkowitz_ewma_batch(y, gamma):
    k = y.shape[1]
    if gamma == 1.0:
        return _berkowitz_batch(y) / k
    w = gamma ** np.arange(k - 1, -1, -1, dtype=np.float64)
    wsum = w.sum()
    mu = (y * w).sum(axis=1) / wsum
    m2 = (y * y * w).sum(axis=1) / wsum
    s2 = np.maximum(m2 - mu * mu, 1e-300)
    return np.maximum(m2 - 1.0 - np.log(s2), 0.0)


def calibrate_stats_np(seed, stream0, reps, m, k, h, step, overhang, theta,
                       gamma, use_ewma, chunk=4096):
    """Batched twin of kernels.calibrate_stats."""
    n_periods = m + (k - 1) * step + h
    n = m - h + 1 + overhang
    out = np.empty(reps)
    done = 0
    while done < reps:
        c = min(chunk, reps - done)
        streams = np.uint64(stream0) + np.arange(done, done + c, dtype=np.uint64)
        base = stream_origin_np(np.uint64(seed), streams)
        idx = np.arange(1, n_periods + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            v = mix64_np(base[:, None] + idx[None, :] * GOLDEN)
        z = norm_ppf_np(((v >> _U11).astype(np.float64) + 0.5) * INV53)
        nh = n_periods - h + 1
        hs = np.empty((c, nh))
        hs[:, 0] = z[:, :h].sum(axis=1)
        for j in range(1, nh):
            hs[:, j] = hs[:, j - 1] + z[:, j + h - 1] - z[:, j - 1]
        ps = np.concatenate([np.zeros((c, 1)), np.cumsum(hs, axis=1)], axis=1)
        ps2 = np.concatenate([np.zeros((c, 1)), np.cumsum(hs * hs, axis=1)],
                             axis=1)
        y = np.empty((c, k))
        for j in range(k):
            s = j * step
            win = np.sort(hs[:, s:s + n], axis=1)
            mean = (ps[:, s + n] - ps[:, s]) / n
            var = np.maximum((ps2[:, s + n] - ps2[:, s]) / n - mean * mean, 0.0)
            r_out = theta * hs[:, s + m]
            p = _ecdf_batch(win, mean, np.sqrt(var), r_out)
            y[:, j] = norm_ppf_np(p)
        if use_ewma:
            out[done:done + c] = _berkowitz_ewma_batch(y, gamma)
        else:
            out[done:done + c] = _berkowitz_batch(y)
        done += c
    return out
