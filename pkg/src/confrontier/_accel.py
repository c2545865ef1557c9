"""Numba on/off switch shared by every hot kernel.

Set CONFRONTIER_NUMBA=0 to force the interpreted path; the same kernel source
runs either way, and the vectorized numpy twins in kernels_np take over the
batch-level work when compilation is off.
"""

import os
import warnings

_flag = os.environ.get("CONFRONTIER_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _flag not in ("0", "false", "off", "no")

if NUMBA_ENABLED:
    try:
        # pin the layer we actually get anyway; skips a noisy stale-TBB probe
        os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".*TBB.*")
            from numba import njit, prange
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range
