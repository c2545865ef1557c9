"""Batch workbench: one entry point, nine subcommands, reproducible files.

Every run resolves a flat key=value configuration (defaults, then config
file, then command-line flags), embeds its hash and the seed in a header
line of each emitted file, and refuses to overwrite existing outputs
unless forced. Identical config and seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from dataclasses import dataclass, fields, replace

from . import backtest as backtest_mod
from . import calibration, consistency, expost, optimizer
from .errors import (
    CalibrationError,
    DataError,
    PreconditionError,
    SolverError,
)
from .estimation import make_estimator
from .market_data import WindowSpec, load_returns, serialize_returns
from .randgen import (
    PURPOSE_EXPOST,
    PURPOSE_SCENARIO,
    SeededSource,
    mvn_series,
    synthetic_moments,
)

VALIDATE_MS = (52, 104, 156, 208, 260, 312)

#: held-out share of evaluation dates when --split is not given
_DEFAULT_SPLIT_NUM, _DEFAULT_SPLIT_DEN = 200, 243


@dataclass(frozen=True)
class RunConfig:
    m: tuple = (312,)
    k: tuple = (39,)
    h: int = 4
    b: int = 11
    c: int = 50
    u: float = 0.33
    rp: int = 500
    gamma: tuple = (1.0,)
    level: float = 0.20
    estimator: str = "sample"
    seed: int = 0
    input: str = ""
    out: str = "."
    table: str = ""
    reps: int = 20000
    repetitions: int = 5
    p_draws: int = 10
    periods: int = 1600
    n_assets: int = 10
    origin: int = -1
    split: int = -1
    overhang: int = -1
    detail: bool = False
    force: bool = False
    all_cells: bool = False


def _parse_ints(text):
    return tuple(int(p) for p in str(text).split(",") if p != "")


def _parse_floats(text):
    return tuple(float(p) for p in str(text).split(",") if p != "")


def _parse_level(text):
    text = str(text).strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100.0
    val = float(text)
    return val / 100.0 if val > 1.0 else val


def _parse_bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


_PARSERS = {
    "m": _parse_ints, "k": _parse_ints, "gamma": _parse_floats,
    "level": _parse_level, "h": int, "b": int, "c": int, "rp": int,
    "seed": int, "reps": int, "repetitions": int, "p_draws": int,
    "periods": int, "n_assets": int, "origin": int, "split": int,
    "overhang": int, "u": float, "estimator": str, "input": str,
    "out": str, "table": str, "detail": _parse_bool,
    "force": _parse_bool, "all_cells": _parse_bool,
}


# where files go and whether they may be replaced does not change what is
# computed, so these keys stay out of the provenance hash
_HASH_EXCLUDE = frozenset({"out", "force", "detail"})


def config_text(cfg, for_hash=False):
    """Canonical flat key=value form; hashed into file provenance."""
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        if for_hash and f.name in _HASH_EXCLUDE:
            continue
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(repr(v) if isinstance(v, float) else str(v)
                           for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        lines.append("%s=%s" % (f.name, val))
    return "\n".join(lines) + "\n"


def load_config(stream):
    """Parse a key=value file into overrides on the defaults."""
    updates = {}
    for i, line in enumerate(stream):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise PreconditionError("config line %d is not key=value" % (i + 1))
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _PARSERS:
            raise PreconditionError("unknown config key %r" % key)
        updates[key] = _PARSERS[key](raw.strip())
    return replace(RunConfig(), **updates)


def _provenance(cfg):
    digest = hashlib.sha256(config_text(cfg, for_hash=True).encode()).hexdigest()
    return "# provenance config=%s seed=%d\n" % (digest, cfg.seed)


def _open_out(cfg, name):
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    if os.path.exists(path) and not cfg.force:
        raise PreconditionError(
            "output %s exists; pass --force to overwrite" % path
        )
    stream = open(path, "w", encoding="utf-8", newline="")
    stream.write(_provenance(cfg))
    return path, stream


def _single(values, name):
    if len(values) != 1:
        raise PreconditionError("exactly one %s expected, got %r"
                                % (name, list(values)))
    return values[0]


def _overhang(cfg):
    return None if cfg.overhang < 0 else cfg.overhang


def _load_panel(cfg):
    if not cfg.input:
        raise PreconditionError("--input returns file required")
    return load_returns(cfg.input)


def _load_table(cfg):
    if not cfg.table:
        raise PreconditionError("--table critical-value file required")
    with open(cfg.table, "r", encoding="utf-8") as fh:
        return calibration.load_table(fh)


def _grid_kw(cfg):
    return dict(b_count=cfg.b, c_count=cfg.c, upper=cfg.u, rp=cfg.rp,
                estimator=cfg.estimator, seed=cfg.seed,
                overhang=_overhang(cfg))


def _eval_origins(panel, m, k, h):
    first = m - 1 + (k - 1) * h
    last = panel.n_periods - 1 - h
    if first > last:
        needed = m + k * h
        raise PreconditionError(
            "insufficient history: %d periods given, need at least %d"
            " (M=%d window, K=%d origins spaced H=%d, plus H out-of-sample)"
            % (panel.n_periods, needed, m, k, h)
        )
    return list(range(first, last + 1, h))


def _split_of(cfg, n_evals):
    if cfg.split > 0:
        split = cfg.split
    else:
        split = round(n_evals * _DEFAULT_SPLIT_NUM / _DEFAULT_SPLIT_DEN)
    return max(2, min(n_evals - 1, split))


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(cfg, _overridden):
    table = calibration.CriticalValueTable()
    for gamma in cfg.gamma:
        for m in cfg.m:
            for k in cfg.k:
                calibration.calibrate(m, k, cfg.h, gamma, cfg.reps,
                                      cfg.repetitions, cfg.seed,
                                      _overhang(cfg), table)
    path, stream = _open_out(cfg, "criticals.csv")
    with stream:
        calibration.save_table(table, stream)
    print("wrote %s (%d rows)" % (path, len(table.entries)))
    return 0


def cmd_simulate(cfg, _overridden):
    src = SeededSource(cfg.seed)
    mu, sigma = synthetic_moments(cfg.n_assets,
                                  src.child(PURPOSE_SCENARIO, 1))
    panel = mvn_series(mu, sigma, cfg.periods,
                       src.child(PURPOSE_SCENARIO, 0))
    path, stream = _open_out(cfg, "panel.csv")
    with stream:
        serialize_returns(panel, stream)
    print("wrote %s (%d periods, %d assets)"
          % (path, panel.n_periods, panel.n_assets))
    return 0


def _window_moments(cfg, panel, default_origin=None):
    m = _single(cfg.m, "M")
    origin = cfg.origin if cfg.origin >= 0 else (
        default_origin if default_origin is not None
        else panel.n_periods - 1)
    window = WindowSpec(origin, m, cfg.h)
    window.check_inside(panel)
    return origin, make_estimator(cfg.estimator)(panel, window)


def cmd_frontier(cfg, _overridden):
    panel = _load_panel(cfg)
    origin, moments = _window_moments(cfg, panel)
    front = optimizer.frontier(moments, cfg.u, cfg.b)
    path, stream = _open_out(cfg, "frontier.csv")
    with stream:
        stream.write("b,expected_return,stdev,weights\n")
        for i, pt in enumerate(front.points):
            stream.write("%d,%r,%r,%s\n" % (
                i, pt.expected_return, pt.stdev,
                ";".join(repr(float(w)) for w in pt.weights)))
    print("wrote %s (%d levels at origin %d)"
          % (path, len(front.points), origin))
    return 0


def cmd_grid(cfg, _overridden):
    panel = _load_panel(cfg)
    m = _single(cfg.m, "M")
    origin = cfg.origin if cfg.origin >= 0 else panel.n_periods - 1
    grid = consistency.build_grid(panel, origin, m, cfg.h, cfg.b, cfg.c,
                                  cfg.u, cfg.rp, cfg.estimator, cfg.seed)
    path, stream = _open_out(cfg, "grid.csv")
    with stream:
        stream.write("b,c,target_return,target_sd,expected_return,stdev,"
                     "provenance,weights\n")
        for cell in grid.cells:
            pf = cell.portfolio
            stream.write("%d,%d,%r,%r,%r,%r,%s,%s\n" % (
                cell.b, cell.c, cell.target_return, cell.target_sd,
                pf.expected_return, pf.stdev, pf.provenance,
                ";".join(repr(float(w)) for w in pf.weights)))
    print("wrote %s (%d cells at origin %d)"
          % (path, len(grid.cells), origin))
    return 0


def cmd_consistency(cfg, _overridden):
    panel = _load_panel(cfg)
    table = _load_table(cfg)
    m = _single(cfg.m, "M")
    k = _single(cfg.k, "K")
    eval_origin = cfg.origin if cfg.origin >= 0 \
        else panel.n_periods - 1 - cfg.h
    _require_span(panel, m, k, cfg.h, eval_origin)
    gamma = cfg.gamma[0]
    cmap, slices = consistency.score_cells(
        panel, eval_origin, m, k, cfg.h, table, cfg.level, gamma,
        slices=None, **_grid_kw(cfg))
    origins = consistency.evaluation_origins(eval_origin, k, cfg.h)
    date = panel.dates[eval_origin]
    path, stream = _open_out(cfg, "map_%s.csv" % date)
    with stream:
        consistency.serialize_map(cmap, slices, origins, stream)
    written = [path]
    if cfg.detail:
        dpath, stream = _open_out(cfg, "map_%s_origins.csv" % date)
        with stream:
            consistency.serialize_origin_detail(slices, origins, stream)
        written.append(dpath)
    print("wrote %s" % ", ".join(written))
    print("proportion consistent at %g%%: %r"
          % (cfg.level * 100, cmap.proportion))
    return 0


def _require_span(panel, m, k, h, eval_origin):
    first = eval_origin - (k - 1) * h
    if first < m - 1 or eval_origin + h >= panel.n_periods:
        needed = m + k * h
        raise PreconditionError(
            "insufficient history around origin %d: %d periods given,"
            " need at least %d (M=%d window, K=%d origins spaced H=%d,"
            " plus H out-of-sample)"
            % (eval_origin, panel.n_periods, needed, m, k, h)
        )


def _expost_rows(cfg, moments, origin, m):
    front = optimizer.frontier(moments, cfg.u, cfg.b)
    method0_iid = expost.expost_frontier_method0(moments, front, cfg.u,
                                                 "iid", m)
    method0_pred = expost.expost_frontier_method0(moments, front, cfg.u,
                                                  "predictive")
    spec = expost.ForecastCovarianceSpec.exemplar(moments.cov, 1.0 / m)
    method1 = expost.expost_frontier_method1(
        moments, front, cfg.u, spec, cfg.p_draws,
        SeededSource(cfg.seed).child(PURPOSE_EXPOST, origin))
    rows = []
    for b, pt in enumerate(front.points):
        rows.append((b, "ex-ante", float("nan"), pt.expected_return,
                     float(pt.stdev) ** 2))
    for name, points in (("method0-iid", method0_iid),
                         ("method0-predictive", method0_pred),
                         ("method1", method1)):
        for b, pt in enumerate(points):
            rows.append((b, name, pt.theta, pt.expected_return,
                         pt.variance))
    return front, rows


def _write_expost(stream, rows):
    stream.write("b,method,theta,expected_return,variance,stdev,"
                 "cvar_daily_1pct\n")
    for b, name, theta, mean, var in rows:
        sd = math.sqrt(max(var, 0.0))
        cvar = expost.cvar_normal(mean, sd, 0.01, days_per_period=5)
        stream.write("%d,%s,%r,%r,%r,%r,%r\n"
                     % (b, name, theta, mean, var, sd, cvar))


def cmd_expost(cfg, _overridden):
    panel = _load_panel(cfg)
    m = _single(cfg.m, "M")
    origin, moments = _window_moments(cfg, panel)
    _, rows = _expost_rows(cfg, moments, origin, m)
    path, stream = _open_out(cfg, "expost.csv")
    with stream:
        _write_expost(stream, rows)
    print("wrote %s (%d rows at origin %d)" % (path, len(rows), origin))
    return 0


def cmd_backtest(cfg, _overridden):
    panel = _load_panel(cfg)
    table = _load_table(cfg)
    m = _single(cfg.m, "M")
    k = _single(cfg.k, "K")
    evals = _eval_origins(panel, m, k, cfg.h)
    if len(evals) < 3:
        raise PreconditionError(
            "only %d evaluation dates available; need at least 3 for a"
            " two-span report" % len(evals)
        )
    split = _split_of(cfg, len(evals))
    result, _ = backtest_mod.run_strategies(
        panel, evals, split, m, k, cfg.h, table, cfg.level, cfg.gamma,
        frontier_only=not cfg.all_cells, **_grid_kw(cfg))
    path_s, stream = _open_out(cfg, "backtest_summary.csv")
    with stream:
        backtest_mod.serialize_summary(result, stream)
    path_l, stream = _open_out(cfg, "backtest_ledger.csv")
    with stream:
        backtest_mod.serialize_ledger(result, stream)
    print("wrote %s, %s" % (path_s, path_l))
    print("evaluations: %d (%d in-sample), selected gamma: %r"
          % (len(evals), split, result.selected_gamma))
    return 0


def cmd_validate(cfg, overridden):
    table = _load_table(cfg)
    ms = cfg.m if "m" in overridden else VALIDATE_MS
    k = _single(cfg.k, "K")
    src = SeededSource(cfg.seed)
    mu, sigma = synthetic_moments(cfg.n_assets,
                                  src.child(PURPOSE_SCENARIO, 1))
    periods = max(ms) + k * cfg.h + cfg.h + 8
    panel = mvn_series(mu, sigma, periods, src.child(PURPOSE_SCENARIO, 0))
    gamma = cfg.gamma[0]
    summary = []
    diffs = []
    for m in ms:
        eval_origin = m - 1 + (k - 1) * cfg.h
        cmap, slices = consistency.score_cells(
            panel, eval_origin, m, k, cfg.h, table, cfg.level, gamma,
            slices=None, **_grid_kw(cfg))
        origins = consistency.evaluation_origins(eval_origin, k, cfg.h)
        _, stream = _open_out(cfg, "validate_grid_m%d.csv" % m)
        with stream:
            consistency.serialize_map(cmap, slices, origins, stream)
        window = WindowSpec(eval_origin, m, cfg.h)
        moments = make_estimator(cfg.estimator)(panel, window)
        _, rows = _expost_rows(cfg, moments, eval_origin, m)
        _, stream = _open_out(cfg, "validate_expost_m%d.csv" % m)
        with stream:
            _write_expost(stream, rows)
        summary.append((m, cmap.proportion))
        by_method = {}
        for b, name, _theta, mean, var in rows:
            by_method[(name, b)] = (mean, var)
        for b in range(cfg.b):
            entries = {}
            for name in ("ex-ante", "method0-iid", "method1"):
                mean, var = by_method[(name, b)]
                sd = math.sqrt(max(var, 0.0))
                entries[name] = (sd, expost.cvar_normal(mean, sd, 0.01,
                                                        days_per_period=5))
            diffs.append((m, b, entries["ex-ante"][0],
                          entries["method0-iid"][0], entries["method1"][0],
                          entries["ex-ante"][1], entries["method0-iid"][1],
                          entries["method1"][1]))
    path_s, stream = _open_out(cfg, "validate_summary.csv")
    with stream:
        stream.write("m,proportion_consistent\n")
        for m, prop in summary:
            stream.write("%d,%r\n" % (m, prop))
    path_d, stream = _open_out(cfg, "validate_diffs.csv")
    with stream:
        stream.write("m,b,sd_exante,sd_method0,sd_method1,cvar_exante,"
                     "cvar_method0,cvar_method1\n")
        for row in diffs:
            stream.write("%d,%d,%r,%r,%r,%r,%r,%r\n" % row)
    print("wrote %s, %s and per-M grid/expost files" % (path_s, path_d))
    for m, prop in summary:
        print("M=%d: proportion consistent %r" % (m, prop))
    return 0


def cmd_run(cfg, _overridden):
    panel = _load_panel(cfg)
    table = _load_table(cfg)
    m = _single(cfg.m, "M")
    k = _single(cfg.k, "K")
    evals = _eval_origins(panel, m, k, cfg.h)
    if len(evals) < 3:
        raise PreconditionError(
            "only %d evaluation dates available; need at least 3 for a"
            " two-span report" % len(evals)
        )
    split = _split_of(cfg, len(evals))
    result, slices = backtest_mod.run_strategies(
        panel, evals, split, m, k, cfg.h, table, cfg.level, cfg.gamma,
        frontier_only=not cfg.all_cells, **_grid_kw(cfg))

    prop_rows = []
    for gamma in sorted(set(cfg.gamma)):
        rows, slices = consistency.proportion_series(
            panel, evals, m, k, cfg.h, table, (0.20, 0.05), gamma,
            slices=slices, **_grid_kw(cfg))
        prop_rows.extend((date, gamma, level, prop)
                         for date, level, prop in rows)
    path_p, stream = _open_out(cfg, "run_proportions.csv")
    with stream:
        stream.write("date,gamma,level,proportion\n")
        for date, gamma, level, prop in prop_rows:
            stream.write("%s,%r,%r,%r\n" % (date, gamma, level, prop))

    map_paths = []
    map_evals = evals if cfg.detail else evals[-1:]
    gamma0 = sorted(set(cfg.gamma))[0]
    for eval_origin in map_evals:
        cmap, slices = consistency.score_cells(
            panel, eval_origin, m, k, cfg.h, table, cfg.level, gamma0,
            slices=slices, **_grid_kw(cfg))
        origins = consistency.evaluation_origins(eval_origin, k, cfg.h)
        date = panel.dates[eval_origin]
        path, stream = _open_out(cfg, "run_map_%s.csv" % date)
        with stream:
            consistency.serialize_map(cmap, slices, origins, stream)
        map_paths.append(path)

    path_s, stream = _open_out(cfg, "run_summary.csv")
    with stream:
        backtest_mod.serialize_summary(result, stream)
    path_l, stream = _open_out(cfg, "run_ledger.csv")
    with stream:
        backtest_mod.serialize_ledger(result, stream)
    print("wrote %s, %s, %s and %d map file(s)"
          % (path_p, path_s, path_l, len(map_paths)))
    print("evaluations: %d (%d in-sample), selected gamma: %r"
          % (len(evals), split, result.selected_gamma))
    return 0


_COMMANDS = {
    "calibrate": cmd_calibrate,
    "frontier": cmd_frontier,
    "grid": cmd_grid,
    "consistency": cmd_consistency,
    "expost": cmd_expost,
    "backtest": cmd_backtest,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "run": cmd_run,
}


def _add_flags(parser):
    parser.add_argument("--config", default=None,
                        help="key=value config file")
    parser.add_argument("--m", default=None,
                        help="estimation window length(s), comma-separated")
    parser.add_argument("--k", default=None,
                        help="number of forecast origins, comma-separated")
    parser.add_argument("--h", default=None, help="forecast horizon")
    parser.add_argument("--b", default=None, help="return levels")
    parser.add_argument("--c", default=None, help="dispersion levels")
    parser.add_argument("--u", default=None, help="per-asset weight cap")
    parser.add_argument("--rp", default=None,
                        help="random portfolios per level")
    parser.add_argument("--gamma", default=None,
                        help="discount factor(s), comma-separated")
    parser.add_argument("--level", default=None,
                        help="significance level (0.20 or 20%%)")
    parser.add_argument("--estimator", default=None,
                        help="moment estimator: sample or ledoit-wolf")
    parser.add_argument("--seed", default=None, help="master seed")
    parser.add_argument("--input", default=None, help="returns CSV")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--table", default=None,
                        help="critical-value table file")
    parser.add_argument("--reps", default=None,
                        help="calibration replications")
    parser.add_argument("--repetitions", default=None,
                        help="calibration repetitions to average")
    parser.add_argument("--p", dest="p_draws", default=None,
                        help="forecast draws for the simulated ex-post"
                             " frontier")
    parser.add_argument("--periods", default=None,
                        help="simulated panel length")
    parser.add_argument("--n", dest="n_assets", default=None,
                        help="simulated asset count")
    parser.add_argument("--origin", default=None,
                        help="explicit origin index (default: latest)")
    parser.add_argument("--split", default=None,
                        help="in-sample evaluation count")
    parser.add_argument("--overhang", default=None,
                        help="in-sample sums reaching past the origin"
                             " (default H-1)")
    parser.add_argument("--detail", action="store_true", default=None,
                        help="also write per-origin detail files")
    parser.add_argument("--force", action="store_true", default=None,
                        help="overwrite existing output files")
    parser.add_argument("--all-cells", dest="all_cells",
                        action="store_true", default=None,
                        help="strategy A searches every cell, not just"
                             " the frontier column")


def _resolve_config(args):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = load_config(fh)
    else:
        cfg = RunConfig()
    overridden = set()
    updates = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        overridden.add(f.name)
        updates[f.name] = raw if isinstance(raw, bool) \
            else _PARSERS[f.name](raw)
    return replace(cfg, **updates), overridden


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="confrontier",
        description="Consistent-portfolio workbench: calibration, grids,"
                    " ex-post frontiers, and backtests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_flags(sub.add_parser(name))
    args = parser.parse_args(argv)
    try:
        cfg, overridden = _resolve_config(args)
        return _COMMANDS[args.command](cfg, overridden)
    except (DataError, PreconditionError, CalibrationError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except SolverError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print("internal error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
