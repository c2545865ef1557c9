"""Consistency grids: score portfolios against their own density forecasts.

At each forecast origin a B x C grid of portfolios is laid over risk-return
space: B return levels along the efficient frontier, C dispersion levels
from the frontier outward to the worst random portfolio at that return.
Every cell's realized H-period return is scored against the cell's
in-sample empirical cdf; K origins give K PIT values per cell and a
Berkowitz statistic. Cells whose volatility-smoothed statistic stays below
the calibrated critical value are consistent: their owners would have had
no distributional grounds to complain.

Grid identity across origins is positional: cell (b, c) is "the b-th
return rung, c-th dispersion rung" even as absolute targets move with each
origin's frontier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import default_overhang, lookup
from .density import PCLAMP
from .errors import PreconditionError
from .market_data import WindowSpec
from .estimation import make_estimator
from .optimizer import (
    frontier as solve_frontier,
    grid_portfolio,
    random_portfolios,
)
from .randgen import PURPOSE_RANDOM_PORTFOLIOS, SeededSource
from . import kernels

DEFAULT_B = 11
DEFAULT_C = 50
DEFAULT_RP = 500
DEFAULT_UPPER = 0.33
SMOOTH_HALF_WIDTH = 4

# task indexes reserve a lane per return level within one origin
_B_LANE = 4096


@dataclass(frozen=True)
class GridCell:
    b: int
    c: int
    target_return: float
    target_sd: float
    portfolio: Portfolio


@dataclass(frozen=True)
class Grid:
    """All B x C cells built at one forecast origin, row-major by (b, c)."""

    origin: int
    origin_date: str
    b_count: int
    c_count: int
    cells: tuple

    def cell(self, b, c):
        return self.cells[b * self.c_count + c]

    @property
    def weight_matrix(self):
        return np.stack([cell.portfolio.weights for cell in self.cells])


def build_grid(panel, origin, m, h, b_count=DEFAULT_B, c_count=DEFAULT_C,
               upper=DEFAULT_UPPER, rp=DEFAULT_RP, estimator="sample",
               seed=0):
    """Construct the grid at one origin from the trailing M-period window.

    Cell (b, 0) is the frontier portfolio at return level b; cell
    (b, C-1) targets the largest standard deviation any of the RP random
    portfolios at that return achieves; interior cells interpolate, each
    solved for minimum weight dispersion starting from the nearest random
    portfolio.
    """
    if b_count < 2 or c_count < 2:
        raise PreconditionError("grid needs at least 2 x 2 cells")
    window = WindowSpec(origin, m, h)
    window.check_inside(panel)
    moments = make_estimator(estimator)(panel, window)
    front = solve_frontier(moments, upper, b_count)
    randoms = []
    sd_caps = []
    for b, point in enumerate(front.points):
        draws = random_portfolios(
            moments, point.expected_return, upper, rp,
            SeededSource(seed).child(PURPOSE_RANDOM_PORTFOLIOS,
                                     origin * _B_LANE + b),
        )
        randoms.append(draws)
        sd_caps.append(max(p.stdev for p in draws))
    returns_span = front.points[-1].expected_return \
        - front.points[0].expected_return
    sd_span = max(sd_caps) - min(p.stdev for p in front.points)
    r_scale = returns_span if returns_span > 0.0 else 1.0
    sd_scale = sd_span if sd_span > 0.0 else 1.0
    cells = []
    for b, point in enumerate(front.points):
        sd0 = point.stdev
        sd_hi = max(sd_caps[b], sd0)
        targets = np.linspace(sd0, sd_hi, c_count)
        for c, sd_target in enumerate(targets):
            if c == 0:
                pf = point
            else:
                start = _nearest_start(randoms[b], point, sd_target,
                                       r_scale, sd_scale)
                pf = grid_portfolio(moments, point.expected_return,
                                    float(sd_target), upper, start)
            cells.append(GridCell(b, c, point.expected_return,
                                  float(sd_target), pf))
    return Grid(origin, panel.dates[origin], b_count, c_count, tuple(cells))


def _nearest_start(draws, frontier_point, sd_target, r_scale, sd_scale):
    target_r = frontier_point.expected_return
    best = None
    best_d = np.inf
    for p in draws:
        d = ((p.expected_return - target_r) / r_scale) ** 2 \
            + ((p.stdev - sd_target) / sd_scale) ** 2
        if d < best_d - 1e-15:
            best, best_d = p, d
    return best if best is not None else frontier_point


@dataclass(frozen=True)
class OriginSlice:
    """Per-cell scoring inputs collected at one origin.

    Arrays are indexed like Grid.cells. realized holds the out-of-sample
    H-period return, pit its in-sample-cdf probability, insample_mean and
    insample_sd the moments of the window's overlapping H-period returns
    (Sharpe inputs), weights the cell portfolios.
    """

    origin: int
    date: str
    b_count: int
    c_count: int
    target_return: np.ndarray
    target_sd: np.ndarray
    realized: np.ndarray
    pit: np.ndarray
    y: np.ndarray
    insample_mean: np.ndarray
    insample_sd: np.ndarray
    weights: np.ndarray


def score_origin(panel, grid, m, h, overhang=None):
    """Realized return and PIT for every cell of one origin's grid.

    The in-sample cdf sample is every H-period return whose observation
    span has begun by the origin: the window's own overlapping sums plus
    the first `overhang` sums reaching past it (default H - 1).
    """
    if overhang is None:
        overhang = default_overhang(h)
    origin = grid.origin
    if origin + h >= panel.n_periods:
        raise PreconditionError(
            "origin %d needs %d out-of-sample periods" % (origin, h)
        )
    start = origin - m + 1
    block = panel.returns[start:origin + 1 + h]
    wmat = grid.weight_matrix
    series_all = block @ wmat.T
    n_cells = len(grid.cells)
    realized = np.empty(n_cells)
    pit = np.empty(n_cells)
    ys = np.empty(n_cells)
    ins_mean = np.empty(n_cells)
    ins_sd = np.empty(n_cells)
    for j in range(n_cells):
        r_out = float(series_all[m:m + h, j].sum())
        p, mean, sd, _ = kernels.window_summary_pit(
            np.ascontiguousarray(series_all[:m + overhang, j]), h, r_out
        )
        realized[j] = r_out
        p = min(max(p, PCLAMP), 1.0 - PCLAMP)
        pit[j] = p
        ys[j] = kernels.norm_ppf(p)
        ins_mean[j] = mean
        ins_sd[j] = sd
    return OriginSlice(
        origin, grid.origin_date, grid.b_count, grid.c_count,
        np.array([cl.target_return for cl in grid.cells]),
        np.array([cl.target_sd for cl in grid.cells]),
        realized, pit, ys, ins_mean, ins_sd, wmat,
    )


def collect_slices(panel, origins, m, h, b_count=DEFAULT_B,
                   c_count=DEFAULT_C, upper=DEFAULT_UPPER, rp=DEFAULT_RP,
                   estimator="sample", seed=0, overhang=None):
    """Build and score a grid at each origin; keyed by origin index.

    Slices are origin-local, so overlapping evaluation windows share them.
    """
    slices = {}
    for origin in origins:
        grid = build_grid(panel, origin, m, h, b_count, c_count, upper, rp,
                          estimator, seed)
        slices[origin] = score_origin(panel, grid, m, h, overhang)
    return slices


@dataclass(frozen=True)
class ConsistencyMap:
    """Scored grid at one evaluation date: statistics and acceptance."""

    raw: np.ndarray
    smoothed: np.ndarray
    consistent: np.ndarray
    level: float
    gamma: float
    critical: float
    proportion: float

    def __post_init__(self):
        expect = self.smoothed < self.critical
        if not np.array_equal(self.consistent, expect):
            raise PreconditionError("acceptance grid contradicts statistics")
        if abs(self.proportion - self.consistent.mean()) > 1e-15:
            raise PreconditionError("proportion must be the grid mean")
        for name in ("raw", "smoothed", "consistent"):
            getattr(self, name).setflags(write=False)


def smooth_statistics(raw):
    """Moving average along the dispersion axis, window truncated at edges."""
    b_count, c_count = raw.shape
    out = np.empty_like(raw)
    for c in range(c_count):
        lo = max(0, c - SMOOTH_HALF_WIDTH)
        hi = min(c_count, c + SMOOTH_HALF_WIDTH + 1)
        out[:, c] = raw[:, lo:hi].mean(axis=1)
    return out


def score_window(slices, origins, gamma, critical, level):
    """Berkowitz per cell over the K origins, smoothed and thresholded."""
    if len(origins) < 2:
        raise PreconditionError("need at least two origins")
    missing = [o for o in origins if o not in slices]
    if missing:
        raise PreconditionError("unscored origins: %s" % missing)
    first = slices[origins[0]]
    b_count, c_count = first.b_count, first.c_count
    ys = np.stack([slices[o].y for o in origins])
    raw = np.empty(b_count * c_count)
    for j in range(raw.size):
        y = np.ascontiguousarray(ys[:, j])
        if gamma >= 1.0:
            raw[j], _, _ = kernels.berkowitz_stat(y)
        else:
            raw[j], _, _ = kernels.berkowitz_ewma_stat(y, gamma)
    raw = raw.reshape(b_count, c_count)
    smoothed = smooth_statistics(raw)
    consistent = smoothed < critical
    return ConsistencyMap(raw, smoothed, consistent, level, gamma,
                          float(critical), float(consistent.mean()))


def evaluation_origins(eval_origin, k, h):
    """The K scoring origins ending at an evaluation origin, H apart."""
    return [eval_origin - (k - 1 - i) * h for i in range(k)]


def score_cells(panel, eval_origin, m, k, h, table, level=0.20, gamma=1.0,
                b_count=DEFAULT_B, c_count=DEFAULT_C, upper=DEFAULT_UPPER,
                rp=DEFAULT_RP, estimator="sample", seed=0, overhang=None,
                slices=None):
    """Score one evaluation date end to end; returns (map, slices).

    slices may carry previously scored origins (they are reused and the
    dict is extended in place), which is how rolling evaluations avoid
    rebuilding shared origins.
    """
    origins = evaluation_origins(eval_origin, k, h)
    if origins[0] < m - 1:
        raise PreconditionError(
            "first scoring origin %d lacks an M-period window" % origins[0]
        )
    critical = lookup(table, m, k, gamma, level)
    if slices is None:
        slices = {}
    todo = [o for o in origins if o not in slices]
    slices.update(collect_slices(panel, todo, m, h, b_count, c_count,
                                 upper, rp, estimator, seed, overhang))
    return score_window(slices, origins, gamma, critical, level), slices


def consistency_frontier(cmap, grid):
    """Minimum-dispersion consistent cell per return level; may be empty."""
    out = []
    for b in range(cmap.consistent.shape[0]):
        cs = np.flatnonzero(cmap.consistent[b])
        if cs.size:
            out.append((b, grid.cell(b, int(cs[0]))))
    return out


def proportion_series(panel, eval_origins, m, k, h, table,
                      levels=(0.20, 0.05), gamma=1.0,
                      b_count=DEFAULT_B, c_count=DEFAULT_C,
                      upper=DEFAULT_UPPER, rp=DEFAULT_RP,
                      estimator="sample", seed=0, overhang=None,
                      slices=None):
    """Consistent proportion per evaluation date at each level.

    Needs panel history from (first evaluation - (K-1)H - M + 1) through
    (last evaluation + H). Returns (rows, slices) where each row is
    (date, level, proportion).
    """
    if slices is None:
        slices = {}
    rows = []
    for eval_origin in eval_origins:
        for level in levels:
            cmap, slices = score_cells(
                panel, eval_origin, m, k, h, table, level, gamma, b_count,
                c_count, upper, rp, estimator, seed, overhang, slices,
            )
            rows.append((panel.dates[eval_origin], float(level),
                         cmap.proportion))
    return rows, slices


def serialize_map(cmap, slices, origins, stream):
    """Write one evaluation's cells as line-delimited records.

    Coordinates and realized moments are averaged over the K origins;
    weights are the latest origin's. Columns: origin_date, b, c,
    target_return, target_sd, realized_mean, realized_sd, statistic,
    smoothed, consistent, weights (semicolon-joined).
    """
    last = slices[origins[-1]]
    date = last.date
    k = len(origins)
    tr = sum(slices[o].target_return for o in origins) / k
    ts = sum(slices[o].target_sd for o in origins) / k
    realized = np.stack([slices[o].realized for o in origins])
    r_mean = realized.mean(axis=0)
    r_sd = realized.std(axis=0)
    stream.write("origin_date,b,c,target_return,target_sd,realized_mean,"
                 "realized_sd,statistic,smoothed,consistent,weights\n")
    c_count = last.c_count
    for j in range(tr.size):
        b, c = divmod(j, c_count)
        weights = ";".join(repr(float(w)) for w in last.weights[j])
        stream.write("%s,%d,%d,%r,%r,%r,%r,%r,%r,%d,%s\n" % (
            date, b, c, float(tr[j]), float(ts[j]), float(r_mean[j]),
            float(r_sd[j]), float(cmap.raw[b, c]),
            float(cmap.smoothed[b, c]), int(cmap.consistent[b, c]), weights,
        ))


def serialize_origin_detail(slices, origins, stream):
    """Per-origin records: one row per (origin, cell)."""
    stream.write("origin_date,b,c,target_return,target_sd,realized,pit,"
                 "insample_mean,insample_sd\n")
    for o in origins:
        sl = slices[o]
        for j in range(sl.realized.size):
            b, c = divmod(j, sl.c_count)
            stream.write("%s,%d,%d,%r,%r,%r,%r,%r,%r\n" % (
                sl.date, b, c, float(sl.target_return[j]),
                float(sl.target_sd[j]), float(sl.realized[j]),
                float(sl.pit[j]), float(sl.insample_mean[j]),
                float(sl.insample_sd[j]),
            ))
