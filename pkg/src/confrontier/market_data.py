"""Returns panels, rolling estimation windows, and overlapping horizon returns.

Returns are treated as per-period log returns, so an H-period return is the
plain sum over H consecutive periods. Dates are opaque ordered labels; the
only calendar knowledge used anywhere is ISO-8601 parseability on ingest.
"""

from __future__ import annotations

import csv
import datetime
import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError


@dataclass(frozen=True)
class ReturnsPanel:
    """Immutable T x N panel of per-period returns."""

    dates: tuple
    tickers: tuple
    returns: np.ndarray

    def __post_init__(self):
        r = self.returns
        if r.ndim != 2:
            raise DataError("returns must be a 2-d array")
        if len(self.dates) != r.shape[0]:
            raise DataError(
                "date count %d != return rows %d" % (len(self.dates), r.shape[0])
            )
        if len(self.tickers) != r.shape[1]:
            raise DataError(
                "ticker count %d != return columns %d"
                % (len(self.tickers), r.shape[1])
            )
        if len(set(self.tickers)) != len(self.tickers):
            raise DataError("duplicate tickers")
        if not np.all(np.isfinite(r)):
            bad = np.argwhere(~np.isfinite(r))[0]
            raise DataError(
                "non-finite return at row %d column %d" % (bad[0], bad[1])
            )
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError("dates not strictly increasing at %r -> %r" % (a, b))
        r.setflags(write=False)

    @property
    def n_periods(self):
        return self.returns.shape[0]

    @property
    def n_assets(self):
        return self.returns.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    """Estimation window of `m` periods ending at `origin`, forecast horizon `h`.

    The window covers period indices origin - m + 1 .. origin inclusive.
    """

    origin: int
    m: int
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise PreconditionError("horizon must be >= 1, got %d" % self.h)
        if self.m < self.h:
            raise PreconditionError(
                "window length %d shorter than horizon %d" % (self.m, self.h)
            )
        if self.origin - self.m + 1 < 0:
            raise PreconditionError(
                "window start %d before first period" % (self.origin - self.m + 1)
            )

    @property
    def start(self):
        return self.origin - self.m + 1

    def check_inside(self, panel):
        if self.origin >= panel.n_periods:
            raise PreconditionError(
                "window origin %d outside panel of %d periods"
                % (self.origin, panel.n_periods)
            )


def _open_source(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    return source


def load_returns(source):
    """Parse a `date,<ticker>,...` CSV into a ReturnsPanel.

    `source` is a path, bytes, or an open text stream. Every defect is
    reported with the offending row/column; nothing is imputed.
    """
    stream = _open_source(source)
    try:
        # '#' lines are provenance headers written by the batch tools
        reader = csv.reader(ln for ln in stream if not ln.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty input")
        header = [c.strip() for c in header]
        if len(header) < 2 or header[0].lower() != "date":
            raise DataError("header must be 'date,<ticker>,...', got %r" % header[:3])
        tickers = tuple(header[1:])
        dates = []
        rows = []
        for i, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(
                    "row %d has %d cells, expected %d" % (i + 2, len(row), len(header))
                )
            label = row[0].strip()
            try:
                datetime.date.fromisoformat(label)
            except ValueError:
                raise DataError("row %d: date %r is not ISO-8601" % (i + 2, label))
            vals = np.empty(len(tickers))
            for j, cell in enumerate(row[1:]):
                try:
                    vals[j] = float(cell)
                except ValueError:
                    raise DataError(
                        "row %d column %r: non-numeric cell %r"
                        % (i + 2, tickers[j], cell)
                    )
            dates.append(label)
            rows.append(vals)
        if not rows:
            raise DataError("no data rows")
        return ReturnsPanel(tuple(dates), tickers, np.array(rows))
    finally:
        if stream is not source:
            stream.close()


def serialize_returns(panel, stream):
    """Inverse of load_returns; writes the canonical CSV form."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["date"] + list(panel.tickers))
    for label, row in zip(panel.dates, panel.returns):
        writer.writerow([label] + [repr(float(v)) for v in row])


def portfolio_return_series(panel, weights, window):
    """Per-period portfolio returns over the window: series[i] = w . row."""
    window.check_inside(panel)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (panel.n_assets,):
        raise PreconditionError(
            "weights shape %r does not match %d assets"
            % (weights.shape, panel.n_assets)
        )
    block = panel.returns[window.start : window.origin + 1]
    return block @ weights


def horizon_returns(series, h):
    """All overlapping h-period (summed) returns of a series: length M - h + 1."""
    series = np.asarray(series, dtype=np.float64)
    if h < 1:
        raise PreconditionError("horizon must be >= 1")
    if series.shape[0] < h:
        raise PreconditionError(
            "series length %d shorter than horizon %d" % (series.shape[0], h)
        )
    cs = np.concatenate([[0.0], np.cumsum(series)])
    return cs[h:] - cs[:-h]
