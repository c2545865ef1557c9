"""Constrained portfolio programs over the budget/box polytope.

Every solver here works on the long-only feasible set of Eq-style constraints
sum(w) = 1, 0 <= w_i <= U, optionally w'mu = R and w'Sigma w = SD^2. The QP is
a primal active-set method; the grid program linearizes its quadratic
equality with an exact L1 merit and falls back to the start point when no
feasible improvement exists, which is the documented behavior for grid cells
that sit below the frontier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, SolverError
from .randgen import PURPOSE_RANDOM_PORTFOLIOS, SeededSource
from . import kernels

BUDGET_TOL = 1e-8
BOX_TOL = 1e-10
RETURN_TOL = 1e-8
KKT_TOL = 1e-9


@dataclass(frozen=True)
class Portfolio:
    weights: np.ndarray
    expected_return: float
    stdev: float
    provenance: str

    def __post_init__(self):
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class Frontier:
    """B portfolios at equally spaced target returns, minimum variance first."""

    points: tuple

    def __post_init__(self):
        rets = [p.expected_return for p in self.points]
        for a, b in zip(rets, rets[1:]):
            if not a < b:
                raise PreconditionError(
                    "frontier returns must strictly increase, got %r -> %r" % (a, b)
                )

    @property
    def min_var(self):
        return self.points[0]

    @property
    def max_ret(self):
        return self.points[-1]

    @property
    def return_levels(self):
        return np.array([p.expected_return for p in self.points])


def feasibility_violations(weights, upper, mu=None, target_return=None):
    """Independent constraint checker; returns the raw violation magnitudes."""
    w = np.asarray(weights, dtype=np.float64)
    out = {
        "budget": abs(float(w.sum()) - 1.0),
        "box": float(max(np.max(-w, initial=0.0), np.max(w - upper, initial=0.0))),
    }
    if mu is not None and target_return is not None:
        out["return"] = abs(float(w @ np.asarray(mu)) - target_return)
    return out


def check_feasible(weights, upper, mu=None, target_return=None,
                   budget_tol=BUDGET_TOL, box_tol=BOX_TOL,
                   return_tol=RETURN_TOL):
    v = feasibility_violations(weights, upper, mu, target_return)
    ok = v["budget"] <= budget_tol and v["box"] <= box_tol
    if "return" in v:
        ok = ok and v["return"] <= return_tol
    return ok


def _require_feasible_bound(n, upper):
    if upper <= 0.0:
        raise PreconditionError("upper bound must be positive")
    if n * upper < 1.0 - 1e-12:
        raise PreconditionError(
            "infeasible bound: %d assets at cap %g cannot reach the budget"
            % (n, upper)
        )


def _as_portfolio(weights, moments, provenance):
    w = np.asarray(weights, dtype=np.float64).copy()
    r = float(w @ moments.mean)
    var = float(w @ moments.cov @ w)
    return Portfolio(w, r, float(np.sqrt(max(var, 0.0))), provenance)


def _solve_qp(moments, upper, targets, x0):
    n = moments.mean.shape[0]
    m = 1 + (1 if targets is not None else 0)
    amat = np.empty((m, n))
    bvec = np.empty(m)
    amat[0] = 1.0
    bvec[0] = 1.0
    if targets is not None:
        amat[1] = moments.mean
        bvec[1] = targets
    x, _, _, status = kernels.qp_box_eq(
        2.0 * moments.cov, np.zeros(n), amat, bvec,
        np.zeros(n), np.full(n, float(upper)), x0, 400, KKT_TOL,
    )
    return x, status


def min_variance(moments, upper):
    """Global minimum-variance portfolio under budget and box constraints."""
    n = moments.mean.shape[0]
    _require_feasible_bound(n, upper)
    x0 = np.full(n, 1.0 / n)  # interior start, always box-feasible when NU >= 1
    x0 = np.minimum(x0, upper)
    x0 = x0 / x0.sum()
    x, status = _solve_qp(moments, upper, None, x0)
    if status != 0:
        raise SolverError("minimum-variance QP did not converge")
    return _as_portfolio(x, moments, "frontier")


def max_return(moments, upper):
    """Greedy cap-fill in decreasing expected-return order; ties take the
    lowest index first."""
    n = moments.mean.shape[0]
    _require_feasible_bound(n, upper)
    order = np.argsort(-moments.mean, kind="stable")
    w = np.zeros(n)
    budget = 1.0
    for i in order:
        take = min(float(upper), budget)
        w[i] = take
        budget -= take
        if budget <= 0.0:
            break
    return _as_portfolio(w, moments, "frontier")


def frontier(moments, upper, n_levels):
    """Equally spaced target returns from min-variance to max-return, inclusive.

    Interior levels solve the target-return QP; the top level is the
    maximum-return portfolio itself.
    """
    if n_levels < 2:
        raise PreconditionError("need at least 2 frontier levels")
    lo = min_variance(moments, upper)
    hi = max_return(moments, upper)
    span = hi.expected_return - lo.expected_return
    if span <= 1e-14:
        raise PreconditionError("degenerate return span: frontier collapses")
    points = [lo]
    for b in range(1, n_levels - 1):
        t = b / (n_levels - 1)
        target = lo.expected_return + t * span
        x0 = (1.0 - t) * lo.weights + t * hi.weights  # feasible blend
        x, status = _solve_qp(moments, upper, target, x0)
        if status != 0:
            raise SolverError("frontier QP failed at level %d" % (b + 1))
        points.append(_as_portfolio(x, moments, "frontier"))
    points.append(hi)
    return Frontier(tuple(points))


def _blend_at_return(lo, hi, target):
    span = hi.expected_return - lo.expected_return
    if span <= 0.0:
        return lo.weights.copy()
    t = (target - lo.expected_return) / span
    t = min(1.0, max(0.0, t))
    return (1.0 - t) * lo.weights + t * hi.weights


def random_portfolios(moments, target_return, upper, count, source):
    """`count` feasible portfolios at an exact expected-return level.

    Draws are symmetric Dirichlet(1), projected onto the budget/return
    equalities, then clip-renormalized inside the box. Draw i consumes a fixed
    slice of the uniform stream, so the output is reproducible regardless of
    how many repairs each draw needs. Draws whose repair stalls fall back to
    the deterministic frontier blend at the target (at a vertex level every
    draw lands there, which is the degenerate feasible set itself).
    """
    if isinstance(source, (int, np.integer)):
        source = SeededSource(int(source), PURPOSE_RANDOM_PORTFOLIOS << 48)
    n = moments.mean.shape[0]
    _require_feasible_bound(n, upper)
    if count < 1:
        raise PreconditionError("count must be >= 1")
    lo_p = min_variance(moments, upper)
    hi_p = max_return(moments, upper)
    if not (lo_p.expected_return - RETURN_TOL
            <= target_return
            <= hi_p.expected_return + RETURN_TOL):
        raise PreconditionError(
            "target return %g outside attainable [%g, %g]"
            % (target_return, lo_p.expected_return, hi_p.expected_return)
        )
    amat = np.vstack([np.ones(n), moments.mean])
    bvec = np.array([1.0, float(target_return)])
    lo = np.zeros(n)
    hi = np.full(n, float(upper))
    blend = _blend_at_return(lo_p, hi_p, target_return)
    ata = amat @ amat.T
    out = []
    u = source.uniforms(count * n).reshape(count, n)
    for i in range(count):
        e = -np.log(u[i])
        x = e / e.sum()
        resid = bvec - amat @ x
        try:
            x = x + amat.T @ np.linalg.solve(ata, resid)
        except np.linalg.LinAlgError:
            x = x + amat.T @ np.linalg.lstsq(ata, resid, rcond=None)[0]
        if kernels.repair_to_equalities(x, amat, bvec, lo, hi, 50, 1e-8) != 0:
            x = blend.copy()
        out.append(_as_portfolio(x, moments, "random"))
    return out


def grid_portfolio(moments, target_return, target_sd, upper, start):
    """Least weight dispersion at exact grid coordinates (return, stdev).

    Non-convergence (including a target below the frontier, where the
    variance equality is infeasible) returns the start portfolio tagged
    `fallback`; improvement over the start's dispersion is guaranteed
    otherwise.
    """
    n = moments.mean.shape[0]
    w0 = np.asarray(start.weights, dtype=np.float64)
    if not check_feasible(w0, upper, moments.mean, target_return,
                          budget_tol=1e-7, box_tol=1e-7, return_tol=1e-6):
        raise PreconditionError("start portfolio violates the cell constraints")
    x, status = kernels.grid_cell_solve(
        moments.cov, moments.mean, float(target_return),
        float(target_sd) ** 2, float(upper), w0.copy(), 200,
    )
    if status != 0:
        return Portfolio(w0.copy(), start.expected_return, start.stdev, "fallback")
    if float(x @ x) > float(w0 @ w0) + 1e-12:
        return Portfolio(w0.copy(), start.expected_return, start.stdev, "fallback")
    return _as_portfolio(x, moments, "grid")
