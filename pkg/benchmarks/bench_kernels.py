"""Timing comparison of the compiled kernels against the numpy fallback.

The package selects its execution path once at import from the
CONFRONTIER_NUMBA environment variable, so this script runs the compiled
path in-process and the fallback path in a subprocess with the flag set.

Usage: python3 benchmarks/bench_kernels.py [reps]
"""

import json
import os
import subprocess
import sys
import time

REPS = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
CELLS = ((52, 26, 4), (312, 39, 4))
N_NORMALS = 2_000_000

_WORKER = r"""
import json, sys, time
import numpy as np
from confrontier._accel import NUMBA_ENABLED
from confrontier import kernels, kernels_np
from confrontier.randgen import SeededSource

reps = int(sys.argv[1])
cells = json.loads(sys.argv[2])
n_normals = int(sys.argv[3])

out = {"numba": NUMBA_ENABLED, "results": {}}

def null_stats(m, k, h):
    if NUMBA_ENABLED:
        return kernels.calibrate_stats(np.uint64(0), np.uint64(1), reps,
                                       m, k, h, h, h - 1, 1.0, 1.0, False)
    return kernels_np.calibrate_stats_np(0, 1, reps, m, k, h, h, h - 1,
                                         1.0, 1.0, False)

for m, k, h in cells:
    null_stats(m, min(k, 3), h)  # warm any compilation
    t0 = time.perf_counter()
    stats = null_stats(m, k, h)
    dt = time.perf_counter() - t0
    out["results"]["calibrate(M=%d,K=%d)" % (m, k)] = {
        "seconds": dt, "checksum": float(np.mean(stats)),
    }

src = SeededSource(1234)
src.normals(1000)
t0 = time.perf_counter()
z = src.normals(n_normals)
dt = time.perf_counter() - t0
out["results"]["normals(%.1e)" % n_normals] = {
    "seconds": dt, "checksum": float(z[:1000].mean()),
}
print(json.dumps(out))
"""


def run_path(numba_flag):
    env = dict(os.environ, CONFRONTIER_NUMBA="1" if numba_flag else "0")
    proc = subprocess.run(
        [sys.executable, "-c", _WORKER, str(REPS), json.dumps(CELLS),
         str(N_NORMALS)],
        capture_output=True, text=True, env=env, check=True,
    )
    return json.loads(proc.stdout.splitlines()[-1])


def main():
    print("replications per cell: %d" % REPS)
    t0 = time.time()
    fast = run_path(True)
    slow = run_path(False)
    assert fast["numba"] and not slow["numba"], "path selection failed"
    print("%-24s %12s %12s %8s" % ("kernel", "numba [s]", "numpy [s]",
                                   "speedup"))
    for name in fast["results"]:
        a = fast["results"][name]
        b = slow["results"][name]
        drift = abs(a["checksum"] - b["checksum"])
        flag = "" if drift < 1e-9 else "  CHECKSUM DRIFT %.2e" % drift
        print("%-24s %12.3f %12.3f %7.1fx%s"
              % (name, a["seconds"], b["seconds"],
                 b["seconds"] / max(a["seconds"], 1e-12), flag))
    print("total wall time %.1fs" % (time.time() - t0))


if __name__ == "__main__":
    main()
