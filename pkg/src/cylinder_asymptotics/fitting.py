"""Small regression helpers shared by the radial and expansion fits."""

import numpy as np

from .errors import InsufficientRangeError, NoiseFloorError
from .validation import check_array


def exponential_design(t, rates, powers=None):
    t = np.asarray(t, dtype=float)
    cols = []
    for i, r in enumerate(rates):
        j = 0 if powers is None else powers[i]
        cols.append(t**j * np.exp(-r * t))
    return np.column_stack(cols) if cols else np.zeros((t.size, 0))


def fit_exponential_sum(t, y, rates, powers=None):
    """Least-squares coefficients of y ~ sum_i c_i t^{j_i} e^{-r_i t}.

    Columns are scaled to unit norm before solving, which keeps the system
    usable when the exponentials span many decades.
    """
    A = exponential_design(t, rates, powers)
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / scale, np.asarray(y, dtype=float), rcond=None)
    coef = coef / scale
    resid = np.asarray(y) - A @ coef
    return coef, resid


def log_linear_fit(t, y, floor=1e-10, min_samples=30):
    """Fit |y| ~ C e^{-rate t}; returns (rate, C, r_squared)."""
    t = check_array(t, "t", ndim=1)
    y = np.abs(check_array(y, "y", shape=t.shape))
    keep = y > floor
    if keep.sum() < min_samples:
        raise NoiseFloorError(f"only {int(keep.sum())} samples above the noise floor {floor:g}")
    tt, ly = t[keep], np.log(y[keep])
    slope, icpt = np.polyfit(tt, ly, 1)
    pred = slope * tt + icpt
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum((ly - pred) ** 2) / ss if ss > 0 else 1.0
    return -slope, float(np.exp(icpt)), float(r2)


def matrix_pencil_rates(t, y, count, pencil=None):
    """Exponential rates present in uniformly sampled data (matrix pencil method).

    Returns the `count` dominant rates sorted increasingly; a constant offset
    shows up as rate 0.
    """
    t = check_array(t, "t", ndim=1)
    y = check_array(y, "y", shape=t.shape)
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise InsufficientRangeError("matrix pencil needs uniformly spaced samples")
    N = len(y)
    L = pencil or N // 2
    if count >= L or L >= N:
        raise InsufficientRangeError("too few samples for the requested number of rates")
    H = np.array([y[i : i + L + 1] for i in range(N - L)])
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    V = Vt[:count].T
    V1, V2 = V[:-1], V[1:]
    z = np.linalg.eigvals(np.linalg.pinv(V1) @ V2)
    rates = -np.log(np.abs(z)) / dt[0]
    return np.sort(rates.real)
