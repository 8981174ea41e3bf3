"""Integrator backend selection.

Prefers the compiled kernel; falls back to the pure-Python twin when the
extension is unavailable or when ``EVIDEST_PURE_PYTHON`` is set (useful for
benchmarking and backend-parity tests). Both backends implement the same
Dormand-Prince 5(4) scheme with identical coefficients, so switching
backends changes trajectories at roundoff level only.
"""

import os

from .rk45_py import (  # noqa: F401  (generic solver only exists in Python)
    FAIL_MAX_STEPS,
    FAIL_STEP_UNDERFLOW,
    OK,
    insect_jacobian,
    rk45_solve,
)
from . import rk45_py

_FORCE_PY = os.environ.get("EVIDEST_PURE_PYTHON", "") not in ("", "0")

if not _FORCE_PY:
    try:
        from . import _rk45_cy as _kernels

        BACKEND = "cython"
    except ImportError:
        _kernels = rk45_py
        BACKEND = "python"
else:
    _kernels = rk45_py
    BACKEND = "python"

insect_rhs = _kernels.insect_rhs
solve_insect = _kernels.solve_insect
solve_insect_batch = _kernels.solve_insect_batch


def backend_name():
    """Name of the active integrator backend ('cython' or 'python')."""
    return BACKEND
