"""Backend selection for the numeric hot loops.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. Setting ``HISTAT_PURE_PYTHON=1`` forces the fallback. Both backends
produce identical bits, so the choice only affects speed.

``HISTAT_THREADS`` caps the worker count of the compiled kernels. Work is split
across output columns, which never changes any summation order.
"""
import os

import numpy as np

from . import _pykernels

_force_python = os.environ.get("HISTAT_PURE_PYTHON", "").strip() not in ("", "0")

if _force_python:
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

FEATURES = dict(_impl.FEATURES)


def _threads():
    raw = os.environ.get("HISTAT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b):
    return _impl.matmul(_f64(a), _f64(b), _threads())


def matmul_tn(a, b):
    """Return ``a.T @ b`` with the reduction running over rows of ``a``."""
    return _impl.matmul_tn(_f64(a), _f64(b), _threads())


def nearest_rows(v, codebook):
    return _impl.nearest_rows(_f64(v), _f64(codebook), _threads())


def scatter_add_rows(indices, values, n_rows):
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    return _impl.scatter_add_rows(idx, _f64(values), int(n_rows))


def use_backend(name):
    """Switch backend at runtime ("compiled" or "python"); returns the previous name."""
    global _impl, BACKEND, FEATURES
    prev = BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "compiled":
        from . import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    FEATURES = dict(_impl.FEATURES)
    return prev
