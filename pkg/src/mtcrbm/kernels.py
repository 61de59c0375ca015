"""Backend selection for the hot loop kernels.

The loop-bound kernels (history-window assembly, the autoregressive morphing
sweep) run through numba's @njit by default; ``MTCRBM_NUMBA=0`` selects the
pure-numpy fallback and ``MTCRBM_NUMBA=1`` insists on numba (raising if it is
unavailable). ``benchmarks/backend_bench.py`` compares the two paths.
"""

import os

from . import _impl

sigmoid = _impl.sigmoid  # vectorized already; no JIT benefit

_JITTED = ("window_stack", "window_pad_counts", "morph_sweep")


def _requested_backend():
    flag = os.environ.get("MTCRBM_NUMBA", "auto").strip().lower()
    if flag in ("0", "off", "false", "no", "numpy"):
        return "numpy"
    if flag in ("1", "on", "true", "yes", "numba"):
        return "numba"
    return "auto"


def _load_numba_kernels():
    from numba import njit

    return {name: njit(cache=True)(getattr(_impl, name)) for name in _JITTED}


_req = _requested_backend()
if _req == "numpy":
    BACKEND = "numpy"
    _funcs = {name: getattr(_impl, name) for name in _JITTED}
elif _req == "numba":
    _funcs = _load_numba_kernels()
    BACKEND = "numba"
else:
    try:
        _funcs = _load_numba_kernels()
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        _funcs = {name: getattr(_impl, name) for name in _JITTED}
        BACKEND = "numpy"

window_stack = _funcs["window_stack"]
window_pad_counts = _funcs["window_pad_counts"]
morph_sweep = _funcs["morph_sweep"]


def numpy_kernels():
    """The uncompiled kernel set (for benchmarks and equivalence tests)."""
    return {name: getattr(_impl, name) for name in _JITTED}


def numba_kernels():
    """Freshly njit-wrapped kernel set; raises ImportError without numba."""
    return _load_numba_kernels()
