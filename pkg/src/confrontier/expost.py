"""Ex-post moments of frontier portfolios built from noisy forecasts.

Ex-ante, a frontier portfolio solves min-variance at a target return under
the estimated moments. Out of sample the weights are a function of the
forecast, itself a random variable, so realized portfolio returns carry
extra variance. This module computes that inflation three ways:

* closed form for the equality-constrained efficient set (alpha/beta
  constants and the exact ex-post frontier),
* Method 0: the closed form applied at each frontier point with the
  point's own active constraint set,
* Method 1: simulation over forecast draws, re-optimizing per draw.

It also provides the parametric consistency test of realized horizon
returns against an ex-post forecast distribution, and a normal-model CVaR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, SolverError
from . import density, kernels
from .optimizer import BOX_TOL, Portfolio, _require_feasible_bound
from .randgen import SeededSource, PURPOSE_EXPOST

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# efficient-set constants


@dataclass(frozen=True)
class EfficientSetConstants:
    """alpha constants of an equality-constrained efficient set.

    The set {w : A'w = b} with covariance Sigma has minimum-dispersion
    member w0 and deflected inverse d0 annihilating the constraint rows;
    frontier members are w0 + theta * d0 @ mu. p counts constraint rows.
    """

    alpha0: float
    alpha1: float
    alpha2: float
    variant: str
    w0: np.ndarray
    d0: np.ndarray
    p: int

    def __post_init__(self):
        self.w0.setflags(write=False)
        self.d0.setflags(write=False)


def standard_constants(mu, sigma, active_set=None):
    """Constants for the budget-only set, or a supplied (A, b) active set.

    A has one column per active constraint. Rank deficiency is an error:
    the caller is describing an impossible or redundant constraint set.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    n = mu.size
    if active_set is None:
        a_mat = np.ones((n, 1))
        b_vec = np.ones(1)
        variant = "budget"
    else:
        a_mat = np.asarray(active_set[0], dtype=np.float64)
        b_vec = np.asarray(active_set[1], dtype=np.float64)
        if a_mat.ndim != 2 or a_mat.shape[0] != n:
            raise PreconditionError("active-set matrix must be n x p")
        if b_vec.shape != (a_mat.shape[1],):
            raise PreconditionError("active-set rhs length mismatch")
        variant = "active-set"
    try:
        si_a = np.linalg.solve(sigma, a_mat)
        gram = a_mat.T @ si_a
        gram_inv_b = np.linalg.solve(gram, b_vec)
        gram_inv_at = np.linalg.solve(gram, si_a.T)
        sigma_inv = np.linalg.solve(sigma, np.eye(n))
    except np.linalg.LinAlgError:
        raise PreconditionError("active set is rank deficient") from None
    # solve() does not reject an ill-conditioned gram; a near-singular one
    # means duplicated constraints and garbage constants downstream
    if np.linalg.cond(gram) > 1e12:
        raise PreconditionError("active set is rank deficient")
    w0 = si_a @ gram_inv_b
    d0 = sigma_inv - si_a @ gram_inv_at
    d0 = 0.5 * (d0 + d0.T)
    alpha0 = float(mu @ w0)
    alpha1 = float(mu @ d0 @ mu)
    scale = float(np.abs(mu).max() ** 2 * np.abs(d0).max() + 1.0)
    if alpha1 < -1e-12 * scale:
        raise PreconditionError("covariance is not positive definite")
    alpha1 = max(alpha1, 0.0)
    alpha2 = float(b_vec @ gram_inv_b)
    return EfficientSetConstants(alpha0, alpha1, alpha2, variant, w0, d0,
                                 a_mat.shape[1])


# ---------------------------------------------------------------------------
# forecast second moments and beta constants


@dataclass(frozen=True)
class ForecastCovarianceSpec:
    """Joint second moments of (actual return R, forecast F) plus bias.

    sigma_rr is the covariance of R, sigma_ff of F, sigma_rf the cross
    block cov(R, F), and bias the mean of F - R.
    """

    sigma_rr: np.ndarray
    sigma_rf: np.ndarray
    sigma_ff: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        n = self.sigma_rr.shape[0]
        for name in ("sigma_rr", "sigma_rf", "sigma_ff"):
            blk = getattr(self, name)
            if blk.shape != (n, n):
                raise PreconditionError("%s must be %d x %d" % (name, n, n))
            blk.setflags(write=False)
        if self.bias.shape != (n,):
            raise PreconditionError("bias must be length %d" % n)
        self.bias.setflags(write=False)

    @classmethod
    def exemplar(cls, sigma_rr, kappa, rho=0.0):
        """Forecast errors proportional to return risk.

        Each forecast has kappa times the variance of its asset and
        correlation rho with it; cross-asset structure mirrors sigma_rr.
        Unbiased. kappa = 1/M is the IID sample-mean forecast, kappa = 1
        the predictive distribution.
        """
        sigma_rr = np.array(sigma_rr, dtype=np.float64)
        if kappa < 0.0:
            raise PreconditionError("kappa must be non-negative")
        if not -1.0 <= rho <= 1.0:
            raise PreconditionError("rho must be in [-1, 1]")
        n = sigma_rr.shape[0]
        return cls(sigma_rr, rho * math.sqrt(kappa) * sigma_rr,
                   kappa * sigma_rr, np.zeros(n))


def beta_constants(constants, spec, mu):
    """The three forecast-noise constants of the ex-post moment expansion."""
    mu = np.asarray(mu, dtype=np.float64)
    d0 = constants.d0
    s_rf = spec.sigma_rf
    s_fr = spec.sigma_rf.T
    s_ff = spec.sigma_ff
    s_rr = spec.sigma_rr
    delta = spec.bias
    d0_mu = d0 @ mu
    d0_delta = d0 @ delta
    b0 = float(np.trace(d0 @ s_rf) + mu @ d0_delta)
    b1 = float(mu @ d0 @ s_fr @ constants.w0)
    d0_srf = d0 @ s_rf
    b2 = float(
        np.trace(d0_srf @ d0_srf + d0 @ s_ff @ d0 @ s_rr)
        + d0_mu @ s_ff @ d0_mu
        + d0_delta @ s_rr @ d0_delta
        + 2.0 * (d0_delta @ s_rr @ d0_mu)
        + 2.0 * (mu @ d0 @ s_fr @ (d0_mu + d0_delta))
    )
    return b0, b1, b2


@dataclass(frozen=True)
class ExPostPoint:
    theta: float
    expected_return: float
    variance: float
    method: str


def expost_moments(constants, betas, theta):
    """Exact ex-post mean and variance at risk appetite theta."""
    b0, b1, b2 = betas
    c = constants
    mu_pf = c.alpha0 + theta * c.alpha1 + theta * b0
    var_pf = c.alpha2 + theta * theta * c.alpha1 + 2.0 * theta * b1 \
        + theta * theta * b2
    return ExPostPoint(float(theta), float(mu_pf), float(var_pf), "moments")


def expost_frontier_constants(constants, betas):
    """(A0, A1, B0, B1) of mu_pf = A0 + (A1/sqrt(B1)) sqrt(var_pf - B0)."""
    b0, b1, b2 = betas
    c = constants
    b1_const = c.alpha1 + b2
    if b1_const <= 0.0:
        raise PreconditionError("degenerate ex-post frontier")
    a0 = c.alpha0 - b1 * (c.alpha1 + b0) / b1_const
    a1 = c.alpha1 + b0
    b0_const = c.alpha2 - b1 * b1 / b1_const
    return float(a0), float(a1), float(b0_const), float(b1_const)


# ---------------------------------------------------------------------------
# Method 0: closed form per frontier point, active set read off the weights


def binding_active_set(weights, upper, tol=1e-9):
    """(A, b) of the budget row plus the bounds this point sits on.

    The return equality is deliberately not part of the set: it is what
    the risk-appetite parameter moves along, not a wall the solution leans
    on. With every weight pinned the budget row is redundant and only the
    bound rows are kept.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    at_lo = np.flatnonzero(w <= tol)
    at_hi = np.flatnonzero(w >= upper - tol)
    idx = np.concatenate([at_lo, at_hi])
    if idx.size >= n:
        return np.eye(n), np.where(w >= upper - tol, upper, 0.0)
    cols = [np.ones(n)]
    rhs = [1.0]
    for i in at_lo:
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(e)
        rhs.append(0.0)
    for i in at_hi:
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(e)
        rhs.append(float(upper))
    return np.stack(cols, axis=1), np.array(rhs)


_MODES = ("iid", "predictive")


def _method0_point(mu, sigma, point, upper, mode, m):
    w = point.weights
    tilde = standard_constants(mu, sigma, binding_active_set(w, upper))
    sigma2_p = float(w @ sigma @ w)
    excess = sigma2_p - tilde.alpha2
    if tilde.alpha1 <= 1e-16 * (1.0 + abs(tilde.alpha2)):
        if excess > 1e-10 * max(sigma2_p, 1e-16):
            raise PreconditionError(
                "theta unrecoverable: flat efficient set off its minimum"
            )
        theta = 0.0
    else:
        theta = (point.expected_return - tilde.alpha0) / tilde.alpha1
        if abs(theta * theta * tilde.alpha1 - excess) > \
                1e-6 * max(sigma2_p, 1e-12):
            raise SolverError(
                "active-set constants inconsistent with the point"
            )
    n = mu.size
    spread = n - tilde.p
    if mode == "iid":
        infl = theta * theta * (spread + tilde.alpha1 / m)
    else:
        infl = theta * theta * (spread + tilde.alpha1)
    return ExPostPoint(float(theta), point.expected_return,
                       sigma2_p + infl, "method0-%s" % mode)


def expost_frontier_method0(moments, frontier, upper, mode="iid", m=None):
    """Closed-form ex-post variance at every frontier point.

    iid mode treats the forecast as an M-observation sample mean (m
    defaults to the estimate's own sample size); predictive mode uses the
    full predictive distribution. Expected returns are unchanged.
    """
    if mode not in _MODES:
        raise PreconditionError("mode must be one of %s" % (_MODES,))
    if mode == "iid":
        if m is None:
            m = moments.sample_size
        if m is None or m < 2:
            raise PreconditionError("iid mode needs the sample size M")
    _require_feasible_bound(moments.mean.size, upper)
    return [
        _method0_point(moments.mean, moments.cov, pt, upper, mode, m)
        for pt in frontier.points
    ]


# ---------------------------------------------------------------------------
# Method 1: simulation over forecast draws


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if vals.min() < -1e-10 * max(vals.max(), 1.0):
        raise PreconditionError("forecast covariance is not PSD")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _greedy_extreme(f, upper, maximize):
    n = f.size
    order = np.argsort(-f if maximize else f, kind="stable")
    w = np.zeros(n)
    left = 1.0
    for i in order:
        take = min(upper, left)
        w[i] = take
        left -= take
        if left <= 0.0:
            break
    return w


def expost_frontier_method1(moments, frontier, upper, spec, p_draws=10,
                            source=0):
    """Simulated ex-post moments: re-optimize under each forecast draw.

    Each draw replaces the mean forecast, the box-constrained frontier
    point at the (attainability-clamped) target return is re-solved, and
    the ex-post mean and variance follow from the weight distribution:
    mean phi'mu and variance phi'S phi + mu'W mu + tr(S W) with phi the
    mean weight vector and W the weight covariance.

    Draws come in antithetic pairs (z, -z), which keeps each forecast
    exactly N(mu + bias, sigma_ff) while removing the first-order
    sampling drift of the mean weight vector; an odd count leaves the
    last draw unpaired.
    """
    if p_draws < 2:
        raise PreconditionError("p_draws must be at least 2")
    mu = moments.mean
    sigma = spec.sigma_rr
    n = mu.size
    _require_feasible_bound(n, upper)
    if isinstance(source, (int, np.integer)):
        source = SeededSource(int(source)).child(PURPOSE_EXPOST, 0)
    root = _psd_sqrt(spec.sigma_ff)
    half = (p_draws + 1) // 2
    z = source.normals(half * n).reshape(half, n)
    z = np.vstack([z, -z])[:p_draws]
    draws = (mu + spec.bias) + z @ root.T
    gmat = 2.0 * sigma
    gvec = np.zeros(n)
    lo = np.zeros(n)
    hi = np.full(n, float(upper))
    out = []
    for pt in frontier.points:
        target = pt.expected_return
        weights = np.empty((p_draws, n))
        for i in range(p_draws):
            f = draws[i]
            w_lo = _greedy_extreme(f, upper, maximize=False)
            w_hi = _greedy_extreme(f, upper, maximize=True)
            r_lo, r_hi = float(f @ w_lo), float(f @ w_hi)
            t_clamped = min(max(target, r_lo), r_hi)
            if r_hi - r_lo <= 1e-14:
                weights[i] = w_lo
                continue
            frac = (t_clamped - r_lo) / (r_hi - r_lo)
            # at an attainable extreme the feasible set collapses to the
            # greedy vertex; the QP cannot start from that degenerate corner
            if frac <= 0.0:
                weights[i] = w_lo
                continue
            if frac >= 1.0:
                weights[i] = w_hi
                continue
            x0 = (1.0 - frac) * w_lo + frac * w_hi
            amat = np.stack([np.ones(n), f])
            bvec = np.array([1.0, t_clamped])
            x, _, _, status = kernels.qp_box_eq(gmat, gvec, amat, bvec, lo,
                                                hi, x0, 400, 1e-9)
            if status != 0:
                raise SolverError(
                    "forecast-draw solve failed at draw %d, target %.6g"
                    % (i, target)
                )
            weights[i] = x
        phi = weights.mean(axis=0)
        centered = weights - phi
        omega = centered.T @ centered / p_draws
        mean_ep = float(phi @ mu)
        var_ep = float(phi @ sigma @ phi + mu @ omega @ mu
                       + np.trace(sigma @ omega))
        out.append(ExPostPoint(float("nan"), mean_ep, var_ep,
                               "method1-p%d" % p_draws))
    return out


# ---------------------------------------------------------------------------
# parametric consistency test and tail risk


def chi2_survival_2dof(x):
    """Exact survival function of a chi-squared with two degrees of freedom."""
    return math.exp(-0.5 * x) if x > 0.0 else 1.0


def expost_consistency_test(realized, point, h, critical_value):
    """Berkowitz test of realized H-period returns against an ex-post law.

    The null is normal with mean H * mu_pf and variance H * var_pf. Returns
    (outcome, consistent, pvalue) where consistent means the statistic is
    strictly below the critical value and the p-value is asymptotic.
    """
    realized = np.asarray(realized, dtype=np.float64)
    if realized.ndim != 1 or realized.size < 2:
        raise PreconditionError("need at least two realized returns")
    if point.variance <= 0.0:
        raise PreconditionError("ex-post variance must be positive")
    mean_h = h * point.expected_return
    sd_h = math.sqrt(h * point.variance)
    probs = np.empty(realized.size)
    for i, r in enumerate(realized):
        probs[i] = kernels.norm_cdf((r - mean_h) / sd_h)
    probs = np.clip(probs, density.PCLAMP, 1.0 - density.PCLAMP)
    outcome = density.berkowitz(density.PitSeries.from_probabilities(probs))
    consistent = outcome.statistic < critical_value
    return outcome, consistent, chi2_survival_2dof(outcome.statistic)


def cvar_normal(mean, stdev, alpha, days_per_period=1):
    """Expected shortfall (positive loss) of a normal return model.

    mean and stdev are per aggregation period; days_per_period > 1 rescales
    to the daily law under independence before taking the tail mean.
    """
    if not 0.0 < alpha < 0.5:
        raise PreconditionError("alpha must be in (0, 0.5)")
    if stdev < 0.0:
        raise PreconditionError("stdev must be non-negative")
    if days_per_period < 1:
        raise PreconditionError("days_per_period must be >= 1")
    mu_d = mean / days_per_period
    sd_d = stdev / math.sqrt(days_per_period)
    z = kernels.norm_ppf(alpha)
    pdf = math.exp(-0.5 * z * z) / _SQRT_2PI
    return -mu_d + sd_d * pdf / alpha
