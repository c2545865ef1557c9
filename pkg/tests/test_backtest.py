import io
import math

import numpy as np
import pytest

from confrontier import (
    CriticalValueTable,
    PreconditionError,
    SeededSource,
    TableEntry,
    best_cell,
    calibrate,
    mvn_series,
    run_strategies,
    serialize_ledger,
    serialize_summary,
    sharpe,
    synthetic_moments,
)
from confrontier.backtest import CASH_ROW_COORD, LedgerRow, _aggregate

M, K, H = 26, 4, 2
EVALS = [34, 36, 38, 40]
GRID_KW = dict(b_count=3, c_count=4, upper=0.40, rp=30, seed=4)


@pytest.fixture(scope="module")
def panel():
    src = SeededSource(77)
    mu, sigma = synthetic_moments(5, src.child(1, 0))
    return mvn_series(mu, sigma, 60, src.child(2, 0))


@pytest.fixture(scope="module")
def table():
    t = calibrate(M, K, H, reps=1000, repetitions=1, seed=3)
    t.entries.update(
        calibrate(M, K, H, gamma=0.94, reps=1000, repetitions=1,
                  seed=3).entries)
    return t


def flat_table(value, gammas=(0.94, 1.0)):
    """Table whose every critical value is `value`, for both levels."""
    t = CriticalValueTable()
    for g in gammas:
        for pct in (80, 95):
            t.put(M, K, g, pct, TableEntry(value, 1000, 1, 0, H, H - 1))
    return t


class TestSharpe:
    def test_two_point_hand_case(self):
        assert sharpe([0.01, 0.03]) == pytest.approx(2.0, abs=1e-15)

    def test_matches_mle_formula(self):
        rng = np.random.default_rng(3)
        x = rng.normal(0.001, 0.02, 40)
        expect = x.mean() / x.std()
        assert sharpe(x) == pytest.approx(expect, abs=1e-15)

    def test_rejects_degenerate_series(self):
        with pytest.raises(PreconditionError, match="standard deviation"):
            sharpe([0.02, 0.02, 0.02])
        with pytest.raises(PreconditionError, match="two returns"):
            sharpe([0.02])


class FakeSlice:
    def __init__(self, means, sds):
        self.insample_mean = np.asarray(means, dtype=float)
        self.insample_sd = np.asarray(sds, dtype=float)


class TestBestCell:
    def test_picks_highest_insample_sharpe(self):
        sl = FakeSlice([0.01, 0.02, 0.01], [0.01, 0.01, 0.005])
        assert best_cell(sl, np.ones(3, dtype=bool)) == 1

    def test_ties_break_to_lowest_index(self):
        sl = FakeSlice([0.02, 0.02, 0.02], [0.01, 0.01, 0.01])
        assert best_cell(sl, np.ones(3, dtype=bool)) == 0
        mask = np.array([False, True, True])
        assert best_cell(sl, mask) == 1

    def test_mask_restricts_candidates(self):
        sl = FakeSlice([0.05, 0.01], [0.01, 0.01])
        assert best_cell(sl, np.array([False, True])) == 1

    def test_none_when_empty_or_degenerate(self):
        sl = FakeSlice([0.01, 0.02], [0.0, -1.0])
        assert best_cell(sl, np.ones(2, dtype=bool)) is None
        sl2 = FakeSlice([0.01], [0.01])
        assert best_cell(sl2, np.zeros(1, dtype=bool)) is None


@pytest.fixture(scope="module")
def result(panel, table):
    res, slices = run_strategies(panel, EVALS, 2, M, K, H, table,
                                 gammas=(1.0, 0.94), **GRID_KW)
    return res, slices


class TestRunStrategies:

    def test_report_shapes(self, result):
        res, _ = result
        assert res.strategy_a.strategy == "A"
        assert len(res.strategy_a.rows) == len(EVALS)
        assert len(res.strategy_b) == 2
        assert [r.gamma for r in res.strategy_b] == [0.94, 1.0]
        for rep in res.strategy_b:
            assert len(rep.rows) == len(EVALS)
        assert res.selected_gamma in (0.94, 1.0)

    def test_span_labels_follow_insample_count(self, result):
        res, _ = result
        spans = [r.span for r in res.strategy_a.rows]
        assert spans == ["in-sample", "in-sample", "out-of-sample",
                         "out-of-sample"]

    def test_strategy_a_holds_frontier_cells_only(self, result):
        res, _ = result
        for row in res.strategy_a.rows:
            if not row.cash:
                assert row.c == 0

    def test_strategy_a_choice_matches_manual_argmax(self, result):
        res, slices = result
        for row, origin in zip(res.strategy_a.rows, EVALS):
            sl = slices[origin]
            frontier_cells = [j for j in range(sl.realized.size)
                              if j % sl.c_count == 0
                              and sl.insample_sd[j] > 0.0]
            scores = [sl.insample_mean[j] / sl.insample_sd[j]
                      for j in frontier_cells]
            j_best = frontier_cells[int(np.argmax(scores))]
            assert (row.b, row.c) == divmod(j_best, sl.c_count)
            assert row.realized == float(sl.realized[j_best])

    def test_strategy_b_rows_come_from_consistent_cells(self, panel, table):
        res, slices = run_strategies(panel, EVALS, 2, M, K, H, table,
                                     gammas=(1.0,), **GRID_KW)
        from confrontier import evaluation_origins, lookup, score_window
        rep = res.strategy_b[0]
        for row, origin in zip(rep.rows, EVALS):
            cmap = score_window(slices, evaluation_origins(origin, K, H),
                                1.0, lookup(table, M, K, 1.0, 0.20), 0.20)
            if row.cash:
                assert not cmap.consistent.any() or all(
                    slices[origin].insample_sd[j] <= 0.0
                    for j in np.flatnonzero(cmap.consistent.reshape(-1)))
            else:
                assert cmap.consistent[row.b, row.c]

    def test_nothing_consistent_goes_to_cash(self, panel):
        res, _ = run_strategies(panel, EVALS, 2, M, K, H,
                                flat_table(-1e9), gammas=(1.0,), **GRID_KW)
        rep = res.strategy_b[0]
        for row in rep.rows:
            assert row.cash
            assert (row.b, row.c) == (CASH_ROW_COORD, CASH_ROW_COORD)
            assert row.realized == 0.0
            assert math.isnan(row.insample_sharpe)
        for span in rep.spans:
            assert span.cash_only
            assert span.mean == 0.0
            assert span.stdev == 0.0
            assert math.isnan(span.sharpe)

    def test_everything_consistent_equals_unrestricted_sharpe_rule(
            self, panel):
        res_b, _ = run_strategies(panel, EVALS, 2, M, K, H,
                                  flat_table(1e9), gammas=(1.0,), **GRID_KW)
        res_a, _ = run_strategies(panel, EVALS, 2, M, K, H,
                                  flat_table(1e9), gammas=(1.0,),
                                  frontier_only=False, **GRID_KW)
        for rb, ra in zip(res_b.strategy_b[0].rows, res_a.strategy_a.rows):
            assert (rb.b, rb.c, rb.realized) == (ra.b, ra.c, ra.realized)

    def test_aggregates_recomputable_from_rows(self, result):
        res, _ = result
        for rep in (res.strategy_a, *res.strategy_b):
            for span in rep.spans:
                sub = [r.realized for r in rep.rows if r.span == span.span]
                x = np.array(sub)
                assert span.count == x.size
                assert span.mean == pytest.approx(x.mean(), abs=1e-12)
                assert span.stdev == pytest.approx(x.std(), abs=1e-12)
                if span.stdev > 0.0:
                    assert span.sharpe == pytest.approx(
                        x.mean() / x.std(), abs=1e-12)

    def test_gamma_selection_prefers_higher_insample_mean(self, result):
        res, _ = result
        means = {rep.gamma: rep.spans[0].mean for rep in res.strategy_b}
        best = max(means.values())
        winners = sorted(g for g, v in means.items() if v == best)
        assert res.selected_gamma == winners[0]

    def test_deterministic(self, panel, table):
        out = []
        for _ in range(2):
            res, _ = run_strategies(panel, EVALS, 2, M, K, H, table,
                                    gammas=(1.0, 0.94), **GRID_KW)
            buf = io.StringIO()
            serialize_ledger(res, buf)
            out.append(buf.getvalue())
        assert out[0] == out[1]

    def test_validates_spans_and_gammas(self, panel, table):
        with pytest.raises(PreconditionError, match="in-sample span"):
            run_strategies(panel, EVALS, 1, M, K, H, table, **GRID_KW)
        with pytest.raises(PreconditionError, match="in-sample span"):
            run_strategies(panel, EVALS, 5, M, K, H, table, **GRID_KW)
        with pytest.raises(PreconditionError, match="gamma"):
            run_strategies(panel, EVALS, 2, M, K, H, table, gammas=(),
                           **GRID_KW)


class TestSerialization:
    def test_summary_rows_and_selected_flag(self, result):
        result, _ = result
        buf = io.StringIO()
        serialize_summary(result, buf)
        lines = buf.getvalue().strip().split("\n")
        # header + 2 spans for A and for each of two B reports
        assert len(lines) == 1 + 2 * 3
        selected = [ln for ln in lines[1:] if ln.endswith(",1")]
        assert len(selected) == 2
        for ln in selected:
            parts = ln.split(",")
            assert parts[0] == "B"
            assert float(parts[1]) == result.selected_gamma

    def test_ledger_parses_back_to_rows(self, result):
        result, _ = result
        buf = io.StringIO()
        serialize_ledger(result, buf)
        lines = buf.getvalue().strip().split("\n")
        reports = [result.strategy_a, *result.strategy_b]
        assert len(lines) == 1 + sum(len(r.rows) for r in reports)
        i = 1
        for rep in reports:
            for row in rep.rows:
                parts = lines[i].split(",")
                assert parts[0] == rep.strategy
                assert float(parts[1]) == rep.gamma
                assert parts[2] == row.date
                assert int(parts[4]) == row.b and int(parts[5]) == row.c
                assert float(parts[7]) == row.realized
                i += 1

    def test_ledger_reaggregates_to_summary(self, result):
        result, _ = result
        led, summ = io.StringIO(), io.StringIO()
        serialize_ledger(result, led)
        serialize_summary(result, summ)
        rows = [ln.split(",") for ln in led.getvalue().strip().split("\n")[1:]]
        for ln in summ.getvalue().strip().split("\n")[1:]:
            p = ln.split(",")
            strategy, gamma, span, count = p[0], float(p[1]), p[2], int(p[3])
            got = np.array([float(r[7]) for r in rows
                            if r[0] == strategy and float(r[1]) == gamma
                            and r[3] == span])
            assert got.size == count
            if count:
                assert float(p[4]) == pytest.approx(got.mean(), abs=1e-12)
                assert float(p[5]) == pytest.approx(got.std(), abs=1e-12)


class TestAggregateEdges:
    def test_empty_span_is_nan_and_not_cash_only(self):
        agg = _aggregate([], "in-sample")
        assert agg.count == 0
        assert math.isnan(agg.mean) and math.isnan(agg.stdev)
        assert not agg.cash_only

    def test_single_row_span(self):
        row = LedgerRow("2001-01-01", "in-sample", 0, 0, False, 0.02, 1.0)
        agg = _aggregate([row], "in-sample")
        assert agg.count == 1 and agg.mean == 0.02
        assert agg.stdev == 0.0
        assert math.isnan(agg.sharpe)
