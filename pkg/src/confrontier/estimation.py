"""Window moment estimation: sample moments and Ledoit-Wolf shrinkage.

Covariances use the maximum-likelihood divisor M throughout (the likelihood
framing of the density tests assumes it; switch DIVISOR_OFFSET to 1 for the
unbiased convention). Every covariance leaving this module has been repaired
to SPD, so downstream Cholesky factorizations and inverse formulas are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError

DIVISOR_OFFSET = 0  # divisor = M - DIVISOR_OFFSET

# eigenvalue floor, relative to mean diagonal mass
SPD_FLOOR = 1e-10


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    estimator: str
    sample_size: int
    intensity: float = None  # shrinkage weight, ledoit-wolf only

    def __post_init__(self):
        if not np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=0.0):
            raise DataError("covariance not symmetric")
        self.mean.setflags(write=False)
        self.cov.setflags(write=False)


def spd_repair(cov):
    """Shift the diagonal just enough that lambda_min >= SPD_FLOOR * tr/N.

    A zero matrix (constant returns) is left untouched; callers that need a
    factorization reject it downstream.
    """
    cov = np.asarray(cov, dtype=np.float64)
    n = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    tr = float(np.trace(cov))
    if tr <= 0.0:
        return cov
    floor = SPD_FLOOR * tr / n
    lam_min = float(np.linalg.eigvalsh(cov)[0])
    if lam_min < floor:
        cov = cov + (floor - lam_min) * np.eye(n)
    return cov


def _window_block(panel, window):
    window.check_inside(panel)
    if window.m < 2:
        raise PreconditionError("need at least 2 periods, got %d" % window.m)
    return panel.returns[window.start : window.origin + 1]


def sample_moments(panel, window):
    """Column means and MLE covariance over the window."""
    x = _window_block(panel, window)
    m = x.shape[0]
    mu = x.mean(axis=0)
    d = x - mu
    cov = d.T @ d / (m - DIVISOR_OFFSET)
    return MomentEstimate(mu, spd_repair(cov), "sample", m)


def ledoit_wolf(panel, window, intensity=None):
    """Single-index Ledoit-Wolf shrinkage of the window covariance.

    The target is the market-model covariance with the market proxy taken as
    the equal-weighted average of the assets over the window. `intensity`
    overrides the estimated optimal delta* (still clamped to [0, 1]);
    intensity=0 reproduces sample_moments exactly.
    """
    x = _window_block(panel, window)
    t, n = x.shape
    mu = x.mean(axis=0)
    x = x - mu
    xmkt = x.mean(axis=1)
    varmkt = float(xmkt @ xmkt) / t
    if varmkt <= 0.0:
        raise DataError("market proxy has zero variance over the window")
    sample = x.T @ x / t
    covmkt = x.T @ xmkt / t
    prior = np.outer(covmkt, covmkt) / varmkt
    np.fill_diagonal(prior, np.diag(sample))

    if intensity is None:
        c = float(np.sum((sample - prior) ** 2))
        y = x * x
        p = float(np.sum(y.T @ y)) / t - float(np.sum(sample * sample))
        rdiag = float(np.sum(y * y)) / t - float(np.sum(np.diag(sample) ** 2))
        z = x * xmkt[:, None]
        v1 = (y.T @ z) / t - covmkt[:, None] * sample
        roff1 = (
            float(np.sum(v1 * covmkt[None, :])) - float(np.sum(np.diag(v1) * covmkt))
        ) / varmkt
        v3 = (z.T @ z) / t - varmkt * sample
        roff3 = (
            float(np.sum(v3 * np.outer(covmkt, covmkt)))
            - float(np.sum(np.diag(v3) * covmkt ** 2))
        ) / varmkt ** 2
        r = rdiag + 2.0 * roff1 - roff3
        if c <= 0.0:
            delta = 0.0  # sample already equals the target
        else:
            delta = (p - r) / c / t
    else:
        delta = float(intensity)
    delta = min(1.0, max(0.0, delta))

    cov = delta * prior + (1.0 - delta) * sample
    if DIVISOR_OFFSET:
        cov = cov * (t / (t - DIVISOR_OFFSET))
    return MomentEstimate(mu, spd_repair(cov), "ledoit-wolf", t, intensity=delta)


def make_estimator(tag):
    """Estimator registry used by the pipelines ('sample' or 'ledoit-wolf')."""
    if tag == "sample":
        return sample_moments
    if tag == "ledoit-wolf":
        return ledoit_wolf
    raise PreconditionError("unknown estimator %r" % tag)
