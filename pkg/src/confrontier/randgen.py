"""Seeded random sources and multivariate-normal scenario panels.

The generator is a counter-based SplitMix64: draw i of stream s is a pure
function of (seed, s, i), so streams are splittable, any draw is O(1) random
access, and results are bit-identical across platforms and schedulers.
Normals come from the inverse-CDF transform of the uniforms, keeping the
compiled and interpreted paths exactly aligned.

Stream ids are allocated as (purpose << 48) | task_index so that independent
pipeline stages never collide; see the PURPOSE_* constants.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

from ._accel import NUMBA_ENABLED
from .errors import PreconditionError
from .market_data import ReturnsPanel
from . import kernels, kernels_np

PURPOSE_CALIBRATION = 1
PURPOSE_SCENARIO = 2
PURPOSE_RANDOM_PORTFOLIOS = 3
PURPOSE_EXPOST = 4
PURPOSE_NULL_CHECK = 5

_MASK48 = (1 << 48) - 1
_MASK64 = (1 << 64) - 1


def derive_stream(purpose, task_index):
    """Stream id for (purpose, task): purpose << 48 | task, 64-bit wrapped."""
    if task_index < 0:
        raise PreconditionError("task_index must be >= 0")
    return ((purpose << 48) | (task_index & _MASK48)) & _MASK64


@dataclass(frozen=True)
class SeededSource:
    """One (seed, stream) lane of the generator."""

    seed: int
    stream: int = 0

    def child(self, purpose, task_index):
        return SeededSource(self.seed, derive_stream(purpose, task_index))

    def uniforms(self, count, start=0):
        """`count` uniforms in (0, 1), positions start .. start+count-1."""
        if count < 1:
            raise PreconditionError("count must be >= 1")
        if NUMBA_ENABLED:
            out = np.empty(count)
            kernels.fill_uniforms(
                np.uint64(self.seed & _MASK64),
                np.uint64(self.stream & _MASK64),
                np.uint64(start),
                out,
            )
            return out
        return kernels_np.uniforms_np(
            self.seed & _MASK64, self.stream & _MASK64, start, count
        )

    def normals(self, count, start=0):
        if count < 1:
            raise PreconditionError("count must be >= 1")
        if NUMBA_ENABLED:
            out = np.empty(count)
            kernels.fill_normals(
                np.uint64(self.seed & _MASK64),
                np.uint64(self.stream & _MASK64),
                np.uint64(start),
                out,
            )
            return out
        return kernels_np.normals_np(
            self.seed & _MASK64, self.stream & _MASK64, start, count
        )


def standard_normals(count, source):
    """IID N(0,1) draws from the source, positions 0 .. count-1."""
    return source.normals(count)


def synthetic_weekly_dates(count, start="1988-01-04"):
    """ISO labels spaced 7 days apart; used only to mint simulated panels."""
    d0 = datetime.date.fromisoformat(start)
    return tuple(
        (d0 + datetime.timedelta(days=7 * i)).isoformat() for i in range(count)
    )


def mvn_series(mu, sigma, n_periods, source, tickers=None):
    """Panel of `n_periods` draws from N(mu, sigma) with synthetic weekly dates.

    Rows are mu + L z with L the lower Cholesky factor; row t consumes the
    normals at positions t*N .. t*N+N-1, so extending the panel keeps the
    earlier rows unchanged.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    n = mu.shape[0]
    if sigma.shape != (n, n):
        raise PreconditionError(
            "covariance shape %r does not match mean length %d" % (sigma.shape, n)
        )
    if n_periods < 1:
        raise PreconditionError("n_periods must be >= 1")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise PreconditionError("covariance is not positive definite")
    z = source.normals(n_periods * n).reshape(n_periods, n)
    rows = mu + z @ chol.T
    if tickers is None:
        tickers = tuple("A%02d" % i for i in range(n))
    return ReturnsPanel(synthetic_weekly_dates(n_periods), tuple(tickers), rows)


def synthetic_moments(n_assets, source):
    """Equity-like weekly moments for simulation studies.

    One-factor covariance: asset volatilities 1.5-4% weekly, factor
    loadings 0.4-0.9 (positive definite by construction since the residual
    diagonal stays positive), means 0.05-0.3% weekly.
    """
    if n_assets < 2:
        raise PreconditionError("need at least two assets")
    u = source.uniforms(3 * n_assets)
    sd = 0.015 + 0.025 * u[:n_assets]
    beta = 0.4 + 0.5 * u[n_assets:2 * n_assets]
    mu = 0.0005 + 0.0025 * u[2 * n_assets:]
    corr = np.outer(beta, beta)
    np.fill_diagonal(corr, 1.0)
    return mu, corr * np.outer(sd, sd)
