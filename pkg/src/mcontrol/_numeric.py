"""Small helpers that let the same code run on float64 or mpmath arrays.

Extended precision is represented by numpy object arrays holding ``mpf``
values.  Precision is an explicit integer ``dps`` that callers carry around;
``None`` means plain float64.
"""

from __future__ import annotations

import contextlib
import math

import mpmath
import numpy as np

_mp_exp = np.frompyfunc(mpmath.exp, 1, 1)
_mp_log = np.frompyfunc(mpmath.log, 1, 1)
_mp_sqrt = np.frompyfunc(mpmath.sqrt, 1, 1)
_mp_fabs = np.frompyfunc(mpmath.fabs, 1, 1)


def working(dps):
    """Context manager setting mpmath precision, or a no-op for float64."""
    if dps is None:
        return contextlib.nullcontext()
    return mpmath.workdps(int(dps))


def merge_dps(*values):
    """Highest precision among operands; ``None`` loses to any integer."""
    found = [int(v) for v in values if v is not None]
    return max(found) if found else None


def is_mp(arr) -> bool:
    return isinstance(arr, np.ndarray) and arr.dtype == object


def to_mp(values, dps) -> np.ndarray:
    """Exact conversion of floats (or mpf) to an object array at ``dps``."""
    arr = np.asarray(values, dtype=object) if not isinstance(values, np.ndarray) else values
    with mpmath.workdps(int(dps)):
        flat = [v if isinstance(v, mpmath.mpf) else mpmath.mpf(v) for v in np.ravel(arr)]
    out = np.empty(len(flat), dtype=object)
    out[:] = flat
    return out.reshape(np.shape(arr))


def to_float(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object:
        return np.array([float(v) for v in arr.ravel()], dtype=float).reshape(arr.shape)
    return arr.astype(float, copy=False)


def convert(values, dps) -> np.ndarray:
    """Convert to the backend selected by ``dps``."""
    if dps is None:
        return to_float(values)
    return to_mp(values, dps)


def exp(x):
    return _mp_exp(x) if is_mp(x) else np.exp(x)


def log(x):
    return _mp_log(x) if is_mp(x) else np.log(x)


def sqrt(x):
    return _mp_sqrt(x) if is_mp(x) else np.sqrt(x)


def fabs(x):
    return _mp_fabs(x) if is_mp(x) else np.abs(x)


def scalar_exp(x):
    return mpmath.exp(x) if isinstance(x, mpmath.mpf) else math.exp(x)


def zeros(n, dps):
    if dps is None:
        return np.zeros(n)
    return to_mp(np.zeros(n), dps)
