"""Empirical-CDF forecasts, PIT transforms, and Berkowitz likelihood ratios.

The empirical cdf follows the interpolated-rank form: interior points get
(L + 1/2 + linear interpolation)/(n + 1) where L counts in-sample returns
strictly below the evaluation point, and points at or beyond the sample range
get the normal-tail interpolation anchored at the sample moments, which is
continuous up to the single jump at the sample minimum and keeps every
probability strictly inside (0, 1). Counting strictly-below observations
makes the bracketing pair straddle the point even when the sample has ties,
so the interpolation denominator is always positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from . import kernels

#: probabilities are clamped to [PCLAMP, 1 - PCLAMP] before the normal inverse
PCLAMP = kernels.PCLAMP


@dataclass(frozen=True)
class SampleSummary:
    """Sorted in-sample horizon returns with their anchor moments."""

    sorted_returns: np.ndarray
    mean: float
    stdev: float

    @property
    def n(self):
        return self.sorted_returns.shape[0]

    @classmethod
    def from_sample(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] < 2:
            raise PreconditionError("need a 1-d sample of at least 2 returns")
        srt = np.sort(values)
        mean = float(values.mean())
        var = float(((values - mean) ** 2).mean())
        srt.setflags(write=False)
        return cls(srt, mean, np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class PitSeries:
    probabilities: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = self.probabilities
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise PreconditionError("PIT probabilities must lie strictly in (0,1)")
        p.setflags(write=False)
        self.normals.setflags(write=False)

    @property
    def k(self):
        return self.normals.shape[0]

    @classmethod
    def from_probabilities(cls, probabilities):
        p = np.asarray(probabilities, dtype=np.float64).copy()
        y = np.array([kernels.norm_ppf(v) for v in p])
        return cls(p, y)


@dataclass(frozen=True)
class BerkowitzOutcome:
    statistic: float
    variant: str
    mu: float
    sigma2: float
    k: int


def empirical_cdf(summary, r_out):
    """Forecast probability of observing at most `r_out`, per the two-part cdf."""
    if summary.n < 2:
        raise PreconditionError("empirical cdf needs n >= 2")
    srt = summary.sorted_returns
    if (r_out <= srt[0] or r_out >= srt[-1]) and summary.stdev <= 0.0:
        raise PreconditionError(
            "tail interpolation undefined: sample stdev is zero"
        )
    return kernels.ecdf_prob(srt, summary.mean, summary.stdev, float(r_out))


def pit_to_normal(p):
    """y = inverse standard normal cdf of p."""
    if not 0.0 < p < 1.0:
        raise PreconditionError("probability must be strictly inside (0,1)")
    return kernels.norm_ppf(float(p))


def normal_cdf(x):
    return kernels.norm_cdf(float(x))


def _normals_of(series):
    if isinstance(series, PitSeries):
        return series.normals
    return np.asarray(series, dtype=np.float64)


def berkowitz(series):
    """Likelihood ratio of N(mu, sigma2) MLEs against N(0, 1) on the PIT normals.

    Under a correct forecast the statistic is asymptotically chi-squared with
    two degrees of freedom; finite-sample criticals come from the calibration
    module.
    """
    y = _normals_of(series)
    k = y.shape[0]
    if k < 2:
        raise PreconditionError("need at least 2 observations")
    if float(((y - y.mean()) ** 2).mean()) <= 0.0:
        raise PreconditionError("degenerate likelihood: zero variance of y")
    stat, mu, s2 = kernels.berkowitz_stat(y)
    return BerkowitzOutcome(float(stat), "standard", float(mu), float(s2), k)


def berkowitz_ewma(series, gamma):
    """Discounted variant: weight observation k by gamma^(K-k), newest heaviest.

    The per-weight normalization makes the statistic K times smaller than the
    standard one at gamma = 1, so it is only comparable to critical values
    calibrated for the same gamma.
    """
    y = _normals_of(series)
    k = y.shape[0]
    if k < 2:
        raise PreconditionError("need at least 2 observations")
    if not 0.0 < gamma <= 1.0:
        raise PreconditionError("discount factor must be in (0, 1]")
    w = gamma ** np.arange(k - 1, -1, -1, dtype=np.float64)
    wmu = float((w * y).sum() / w.sum())
    if float((w * (y - wmu) ** 2).sum() / w.sum()) <= 0.0:
        raise PreconditionError("degenerate likelihood: zero weighted variance")
    stat, mu, s2 = kernels.berkowitz_ewma_stat(y, float(gamma))
    return BerkowitzOutcome(
        float(stat), "ewma(%g)" % gamma, float(mu), float(s2), k
    )
