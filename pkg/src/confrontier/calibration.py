"""Monte Carlo calibration of Berkowitz critical values and power analysis.

The null experiment draws an IID standard-normal per-period series long
enough for K forecast origins spaced H periods apart, each with its own
rolling M-period estimation window, and pushes every origin through the same
empirical-cdf / PIT / likelihood-ratio pipeline used on real data. Critical
values are percentiles of the replicated statistics, averaged over
independent repetitions.

The in-sample cdf sample at each origin includes the `overhang` additional
H-period returns whose observation spans have begun by the origin (default
H - 1, every sum already underway). The pipeline modules share this window
convention, which is what makes these critical values applicable to their
statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._accel import NUMBA_ENABLED
from .errors import CalibrationError, PreconditionError
from .randgen import PURPOSE_CALIBRATION, derive_stream
from . import kernels, kernels_np

PERCENTILES = (80, 85, 90, 95)

#: fraction significance levels accepted by lookup()
LEVELS = {0.20: 80, 0.15: 85, 0.10: 90, 0.05: 95}

# power-curve replications draw from task indexes far above calibration's
_POWER_TASK_OFFSET = 1 << 40

DEFAULT_REPS = 20000
DEFAULT_REPETITIONS = 5


def default_overhang(h):
    return h - 1


@dataclass(frozen=True)
class TableEntry:
    value: float
    reps: int
    repetitions: int
    seed: int
    h: int
    overhang: int


@dataclass
class CriticalValueTable:
    """Calibrated critical values keyed by (M, K, gamma, percentile)."""

    entries: dict = field(default_factory=dict)

    @staticmethod
    def key(m, k, gamma, percentile):
        return (int(m), int(k), round(float(gamma), 12), int(percentile))

    def put(self, m, k, gamma, percentile, entry):
        self.entries[self.key(m, k, gamma, percentile)] = entry

    def get(self, m, k, gamma, percentile):
        return self.entries.get(self.key(m, k, gamma, percentile))

    def lattice(self, gamma, percentile):
        """(sorted Ms, sorted Ks) having any entry at this gamma/percentile."""
        gkey = round(float(gamma), 12)
        ms = sorted({m for (m, _, g, p) in self.entries if g == gkey and p == percentile})
        ks = sorted({k for (_, k, g, p) in self.entries if g == gkey and p == percentile})
        return ms, ks


def _null_stats(m, k, h, gamma, reps, seed, task0, theta, overhang):
    use_ewma = gamma < 1.0
    step = h  # origins advance by the horizon: non-overlapping forecasts
    if NUMBA_ENABLED:
        return kernels.calibrate_stats(
            np.uint64(seed), np.uint64(derive_stream(PURPOSE_CALIBRATION, task0)),
            int(reps), int(m), int(k), int(h), step, int(overhang),
            float(theta), float(gamma), use_ewma,
        )
    return kernels_np.calibrate_stats_np(
        seed, derive_stream(PURPOSE_CALIBRATION, task0), int(reps), int(m),
        int(k), int(h), step, int(overhang), float(theta), float(gamma),
        use_ewma,
    )


def calibrate(m, k, h, gamma=1.0, reps=DEFAULT_REPS,
              repetitions=DEFAULT_REPETITIONS, seed=0, overhang=None,
              table=None):
    """Calibrate the four percentile criticals for one (M, K, gamma) cell.

    Returns the (possibly supplied) CriticalValueTable with the cell's
    entries set. Replications are independent streams aggregated by index,
    so results do not depend on execution order.
    """
    if reps < 1000:
        raise PreconditionError("reps must be >= 1000")
    if repetitions < 1:
        raise PreconditionError("repetitions must be >= 1")
    if m < h:
        raise PreconditionError("M must be at least H")
    if not 0.0 < gamma <= 1.0:
        raise PreconditionError("gamma must be in (0, 1]")
    if overhang is None:
        overhang = default_overhang(h)
    if not 0 <= overhang < h:
        raise PreconditionError("overhang must be in [0, H)")
    if table is None:
        table = CriticalValueTable()
    acc = np.zeros(len(PERCENTILES))
    for rep_index in range(repetitions):
        stats = _null_stats(m, k, h, gamma, reps, seed, rep_index * reps,
                            1.0, overhang)
        acc += np.percentile(stats, PERCENTILES)
    acc /= repetitions
    for pct, val in zip(PERCENTILES, acc):
        table.put(m, k, gamma, pct,
                  TableEntry(float(val), reps, repetitions, seed, h, overhang))
    return table


def _level_percentile(level):
    pct = LEVELS.get(round(float(level), 10))
    if pct is None:
        raise PreconditionError(
            "level must be one of %s" % sorted(LEVELS, reverse=True)
        )
    return pct


def lookup(table, m, k, gamma, level):
    """Critical value at a significance level, bilinear in (M, K) off-lattice.

    Extrapolation outside the calibrated hull and uncalibrated gammas are
    refused rather than guessed.
    """
    pct = _level_percentile(level)
    hit = table.get(m, k, gamma, pct)
    if hit is not None:
        return hit.value
    ms, ks = table.lattice(gamma, pct)
    if not ms:
        raise CalibrationError("no calibration for gamma=%g" % gamma)
    if not ms[0] <= m <= ms[-1] or not ks[0] <= k <= ks[-1]:
        raise CalibrationError(
            "(M=%d, K=%d) outside calibrated hull M[%d,%d] x K[%d,%d]"
            % (m, k, ms[0], ms[-1], ks[0], ks[-1])
        )

    def bracket(values, x):
        lo = max(v for v in values if v <= x)
        hi = min(v for v in values if v >= x)
        return lo, hi

    m0, m1 = bracket(ms, m)
    k0, k1 = bracket(ks, k)
    corners = {}
    for mm in {m0, m1}:
        for kk in {k0, k1}:
            e = table.get(mm, kk, gamma, pct)
            if e is None:
                raise CalibrationError(
                    "missing calibration at (M=%d, K=%d) needed for"
                    " interpolation" % (mm, kk)
                )
            corners[(mm, kk)] = e.value
    tm = 0.0 if m1 == m0 else (m - m0) / (m1 - m0)
    tk = 0.0 if k1 == k0 else (k - k0) / (k1 - k0)
    top = (1 - tk) * corners[(m0, k0)] + tk * corners[(m0, k1)]
    bot = (1 - tk) * corners[(m1, k0)] + tk * corners[(m1, k1)]
    return (1 - tm) * top + tm * bot


def power_curve(m, k, theta_grid, level, reps, seed, table, h,
                gamma=1.0, overhang=None):
    """Rejection probability against the calibrated critical per theta scale.

    theta multiplies the out-of-sample standard deviation only; theta = 1 is
    the null and should reject at about the significance level.
    """
    critical = lookup(table, m, k, gamma, level)
    if reps < 1000:
        raise PreconditionError("reps must be >= 1000")
    if overhang is None:
        overhang = default_overhang(h)
    out = {}
    for i, theta in enumerate(theta_grid):
        if theta <= 0.0:
            raise PreconditionError("theta scale must be positive")
        stats = _null_stats(m, k, h, gamma, reps, seed,
                            _POWER_TASK_OFFSET + i * reps, float(theta),
                            overhang)
        out[float(theta)] = float(np.mean(stats > critical))
    return out


_COLUMNS = ("m", "k", "gamma", "percentile", "critical_value", "reps",
            "repetitions", "seed", "h", "overhang")


def save_table(table, stream):
    """Write the table as delimited text, sorted for byte-stable output."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(_COLUMNS)
    for key in sorted(table.entries):
        m, k, gamma, pct = key
        e = table.entries[key]
        writer.writerow([m, k, repr(gamma), pct, repr(e.value), e.reps,
                         e.repetitions, e.seed, e.h, e.overhang])


def load_table(stream):
    rows = [r for r in csv.reader(ln for ln in stream if not ln.startswith("#"))
            if r]
    if not rows or tuple(rows[0]) != _COLUMNS:
        raise CalibrationError("not a critical-value table")
    table = CriticalValueTable()
    for r in rows[1:]:
        m, k, gamma, pct = int(r[0]), int(r[1]), float(r[2]), int(r[3])
        table.put(m, k, gamma, pct,
                  TableEntry(float(r[4]), int(r[5]), int(r[6]), int(r[7]),
                             int(r[8]), int(r[9])))
    return table
