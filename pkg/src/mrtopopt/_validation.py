"""Parameter and input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigurationError, DomainError


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, numbers.Real) and float(value).is_integer():
            value = int(value)
        else:
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_real(value, name, low=None, high=None, open_low=False, open_high=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigurationError(f"{name} must be finite")
    if low is not None and (value < low or (open_low and value == low)):
        raise ConfigurationError(f"{name}={value} is below its allowed range")
    if high is not None and (value > high or (open_high and value == high)):
        raise ConfigurationError(f"{name}={value} is above its allowed range")
    return value


def check_choice(value, name, choices):
    v = str(value).lower()
    allowed = [str(c).lower() for c in choices]
    if v not in allowed:
        raise ConfigurationError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return v


def check_nel(nel):
    try:
        vals = list(nel)
    except TypeError as exc:
        raise ConfigurationError("nel must be a sequence of three integers") from exc
    if len(vals) != 3:
        raise ConfigurationError("nel must have three entries")
    return tuple(check_int(v, "nel", 1) for v in vals)


def check_design(X, n, name="X"):
    """Validate one design vector (n,) or a batch (m, n) with entries in [0, 1]."""
    arr = check_array(X, ensure_2d=False, dtype=np.float64, input_name=name)
    if arr.ndim == 1:
        arr = arr[None, :]
        single = True
    else:
        single = False
    if arr.shape[1] != n:
        raise DomainError(f"{name} has {arr.shape[1]} entries per row, expected {n}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} entries must lie in [0, 1]")
    return arr, single
