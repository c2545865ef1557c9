"""Consistent portfolios: density-forecast scoring for frontier grids.

The package walks a portfolio grid through rolling forecast origins,
scores every cell's realized returns against its own in-sample empirical
cdf with calibrated Berkowitz statistics, and maps the consistency region:
the portfolios whose out-of-sample behaviour matches what their owner was
promised. Ex-post moment corrections, EWMA-discounted variants, and a
cash-or-consistent backtest round out the workbench.
"""

from ._accel import NUMBA_ENABLED
from .errors import (
    CalibrationError,
    DataError,
    PreconditionError,
    SolverError,
)
from .market_data import (
    ReturnsPanel,
    WindowSpec,
    horizon_returns,
    load_returns,
    portfolio_return_series,
    serialize_returns,
)
from .estimation import (
    MomentEstimate,
    ledoit_wolf,
    make_estimator,
    sample_moments,
    spd_repair,
)
from .randgen import (
    PURPOSE_CALIBRATION,
    PURPOSE_EXPOST,
    PURPOSE_NULL_CHECK,
    PURPOSE_RANDOM_PORTFOLIOS,
    PURPOSE_SCENARIO,
    SeededSource,
    derive_stream,
    mvn_series,
    standard_normals,
    synthetic_moments,
    synthetic_weekly_dates,
)
from .density import (
    BerkowitzOutcome,
    PitSeries,
    SampleSummary,
    berkowitz,
    berkowitz_ewma,
    empirical_cdf,
    normal_cdf,
    pit_to_normal,
)
from .optimizer import (
    Frontier,
    Portfolio,
    check_feasible,
    feasibility_violations,
    frontier,
    grid_portfolio,
    max_return,
    min_variance,
    random_portfolios,
)
from .calibration import (
    CriticalValueTable,
    TableEntry,
    calibrate,
    load_table,
    lookup,
    power_curve,
    save_table,
)
from .expost import (
    EfficientSetConstants,
    ExPostPoint,
    ForecastCovarianceSpec,
    beta_constants,
    binding_active_set,
    chi2_survival_2dof,
    cvar_normal,
    expost_consistency_test,
    expost_frontier_constants,
    expost_frontier_method0,
    expost_frontier_method1,
    expost_moments,
    standard_constants,
)
from .consistency import (
    ConsistencyMap,
    Grid,
    GridCell,
    OriginSlice,
    build_grid,
    collect_slices,
    consistency_frontier,
    evaluation_origins,
    proportion_series,
    score_cells,
    score_origin,
    score_window,
    serialize_map,
    serialize_origin_detail,
    smooth_statistics,
)
from .backtest import (
    BacktestReport,
    BacktestResult,
    best_cell,
    run_strategies,
    serialize_ledger,
    serialize_summary,
    sharpe,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
