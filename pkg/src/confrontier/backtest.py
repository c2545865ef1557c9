"""Portfolio selection strategies judged out of sample.

Strategy A holds the frontier cell with the best in-sample Sharpe ratio.
Strategy B restricts the choice to cells the consistency test accepts and
goes to cash (zero return) when none qualify. Both are evaluated per
origin over an in-sample span (which also selects the EWMA discount for B)
and a held-out span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import lookup
from .consistency import evaluation_origins, score_cells, score_window
from .errors import PreconditionError
from .estimation import DIVISOR_OFFSET


def sharpe(series):
    """Mean over standard deviation, zero risk-free rate."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise PreconditionError("need at least two returns")
    mean = x.mean()
    sd = math.sqrt(float(((x - mean) ** 2).sum()) / (x.size - DIVISOR_OFFSET))
    if sd <= 0.0:
        raise PreconditionError("zero standard deviation")
    return float(mean / sd)


def best_cell(sl, mask):
    """Index of the highest in-sample-Sharpe cell among mask, or None.

    Ties break to the lowest (b, c): cells are scanned row-major and only
    a strictly better Sharpe displaces the incumbent. Cells with
    non-positive in-sample dispersion never qualify.
    """
    best = None
    best_s = -np.inf
    for j in np.flatnonzero(mask):
        sd = sl.insample_sd[j]
        if sd <= 0.0:
            continue
        s = sl.insample_mean[j] / sd
        if s > best_s:
            best, best_s = int(j), s
    return best


@dataclass(frozen=True)
class LedgerRow:
    date: str
    span: str
    b: int
    c: int
    cash: bool
    realized: float
    insample_sharpe: float


CASH_ROW_COORD = -1


@dataclass(frozen=True)
class SpanAggregate:
    span: str
    count: int
    mean: float
    stdev: float
    sharpe: float
    cash_only: bool


@dataclass(frozen=True)
class BacktestReport:
    strategy: str
    gamma: float
    rows: tuple
    spans: tuple


@dataclass(frozen=True)
class BacktestResult:
    strategy_a: BacktestReport
    strategy_b: tuple
    selected_gamma: float


def _aggregate(rows, span):
    sub = [r for r in rows if r.span == span]
    if not sub:
        return SpanAggregate(span, 0, float("nan"), float("nan"),
                             float("nan"), False)
    x = np.array([r.realized for r in sub])
    mean = float(x.mean())
    sd = math.sqrt(float(((x - mean) ** 2).sum()) / (x.size - DIVISOR_OFFSET))
    cash_only = all(r.cash for r in sub)
    sratio = mean / sd if sd > 0.0 else float("nan")
    return SpanAggregate(span, x.size, mean, sd, float(sratio), cash_only)


def _report(strategy, gamma, rows):
    return BacktestReport(strategy, gamma, tuple(rows),
                          (_aggregate(rows, "in-sample"),
                           _aggregate(rows, "out-of-sample")))


def _row(sl, j, span, c_count):
    if j is None:
        return LedgerRow(sl.date, span, CASH_ROW_COORD, CASH_ROW_COORD,
                         True, 0.0, float("nan"))
    b, c = divmod(j, c_count)
    s = sl.insample_mean[j] / sl.insample_sd[j]
    return LedgerRow(sl.date, span, b, c, False, float(sl.realized[j]),
                     float(s))


def run_strategies(panel, eval_origins, n_insample, m, k, h, table,
                   level=0.20, gammas=(1.0,), frontier_only=True,
                   slices=None, **grid_kw):
    """Evaluate both strategies across origins; returns (result, slices).

    n_insample leading origins form the selection span: the discount
    gamma with the highest Strategy-B mean return there is reported as
    selected. Ties prefer the smaller gamma. grid_kw is forwarded to the
    grid builder (b_count, c_count, upper, rp, estimator, seed, overhang).
    """
    if not 2 <= n_insample <= len(eval_origins):
        raise PreconditionError("in-sample span must cover 2..all origins")
    if not gammas:
        raise PreconditionError("need at least one gamma")
    if slices is None:
        slices = {}
    gammas = sorted(set(float(g) for g in gammas))

    # score every (origin, gamma) once; slices are shared across windows
    maps = {}
    for idx, eval_origin in enumerate(eval_origins):
        cmap, slices = score_cells(panel, eval_origin, m, k, h, table,
                                   level, gammas[0], slices=slices,
                                   **grid_kw)
        maps[(eval_origin, gammas[0])] = cmap
        origins = evaluation_origins(eval_origin, k, h)
        for gamma in gammas[1:]:
            critical = lookup(table, m, k, gamma, level)
            maps[(eval_origin, gamma)] = score_window(
                slices, origins, gamma, critical, level)

    sample0 = slices[eval_origins[0]]
    c_count = sample0.c_count
    n_cells = sample0.realized.size
    frontier_mask = np.zeros(n_cells, dtype=bool)
    frontier_mask[0::c_count] = True
    a_candidates = frontier_mask if frontier_only else np.ones(n_cells,
                                                               dtype=bool)

    rows_a = []
    rows_b = {g: [] for g in gammas}
    for idx, eval_origin in enumerate(eval_origins):
        sl = slices[eval_origin]
        span = "in-sample" if idx < n_insample else "out-of-sample"
        rows_a.append(_row(sl, best_cell(sl, a_candidates), span, c_count))
        for gamma in gammas:
            mask = maps[(eval_origin, gamma)].consistent.reshape(-1)
            rows_b[gamma].append(_row(sl, best_cell(sl, mask), span,
                                      c_count))

    report_a = _report("A", 1.0, rows_a)
    reports_b = tuple(_report("B", g, rows_b[g]) for g in gammas)
    selected = max(reports_b,
                   key=lambda r: (r.spans[0].mean, -r.gamma)).gamma
    return BacktestResult(report_a, reports_b, float(selected)), slices


def serialize_summary(result, stream):
    """Aggregate table: one row per strategy, gamma, and span."""
    stream.write("strategy,gamma,span,count,mean,stdev,sharpe,cash_only,"
                 "selected\n")
    reports = [result.strategy_a, *result.strategy_b]
    for rep in reports:
        chosen = rep.strategy == "B" and rep.gamma == result.selected_gamma
        for span in rep.spans:
            stream.write("%s,%r,%s,%d,%r,%r,%r,%d,%d\n" % (
                rep.strategy, rep.gamma, span.span, span.count, span.mean,
                span.stdev, span.sharpe, int(span.cash_only), int(chosen),
            ))


def serialize_ledger(result, stream):
    """Per-origin holdings and realized returns for every report."""
    stream.write("strategy,gamma,date,span,b,c,cash,realized,"
                 "insample_sharpe\n")
    for rep in [result.strategy_a, *result.strategy_b]:
        for r in rep.rows:
            stream.write("%s,%r,%s,%s,%d,%d,%d,%r,%r\n" % (
                rep.strategy, rep.gamma, r.date, r.span, r.b, r.c,
                int(r.cash), r.realized, r.insample_sharpe,
            ))
