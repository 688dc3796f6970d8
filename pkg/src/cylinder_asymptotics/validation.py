"""Small input checks shared by the modules and the CLI."""

import numbers

import numpy as np

from .errors import DomainError, ShapeError


def check_int(value, name, low=None, high=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise DomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise DomainError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise DomainError(f"{name} must be <= {high}, got {value}")
    return value


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        raise DomainError(f"{name} must be positive, got {value}")
    return value


def check_array(values, name, ndim=None, shape=None, finite=True):
    arr = np.asarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if shape is not None:
        for axis, size in enumerate(shape):
            if size is not None and arr.shape[axis] != size:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_increasing(t, name="t"):
    t = check_array(t, name, ndim=1)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise DomainError(f"{name} must be strictly increasing")
    return t
