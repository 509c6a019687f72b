"""Dense linear algebra, special functions and assignment used across the package.

Matrices are plain ``numpy.ndarray`` objects in float64; permutations are
integer arrays ``perm`` with ``perm[i]`` the column assigned to row ``i``.
"""
import math

import numpy as np

from . import _kernels
from .errors import ArgumentError, RankDeficiencyError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_matrix(a, name="matrix"):
    """Return ``a`` as a C-contiguous float64 2-D array, rejecting non-finite entries."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ArgumentError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ArgumentError(f"{name} contains non-finite values")
    return m


def ridge_solve(design, targets, ridge=0.0):
    """Solve ``min_X ||design @ X - targets||^2 + ridge * ||X||^2``.

    Uses a Cholesky factorisation of the regularised normal equations. With
    ``ridge == 0`` the design is first checked for full column rank through
    an SVD and the system is solved by least squares.

    Parameters
    ----------
    design : array_like, shape (n, d)
    targets : array_like, shape (n, m) or (n,)
    ridge : float
        Nonnegative Tikhonov weight.

    Returns
    -------
    ndarray, shape (d, m) or (d,)

    Raises
    ------
    RankDeficiencyError
        If ``ridge == 0`` and ``design`` does not have full column rank.
    """
    if not ridge >= 0 or not math.isfinite(ridge):
        raise ArgumentError(f"ridge must be a finite nonnegative scalar, got {ridge}")
    X = as_matrix(design, "design")
    t = np.asarray(targets, dtype=np.float64)
    vector = t.ndim == 1
    T = as_matrix(t[:, None] if vector else t, "targets")
    if T.shape[0] != X.shape[0]:
        raise ArgumentError(f"design has {X.shape[0]} rows but targets has {T.shape[0]}")
    d = X.shape[1]
    if ridge == 0:
        s = np.linalg.svd(X, compute_uv=False)
        tol = s.max(initial=0.0) * max(X.shape) * np.finfo(float).eps
        if s.size < d or np.count_nonzero(s > tol) < d:
            raise RankDeficiencyError("normal equations are singular (rank-deficient design, ridge = 0)")
        sol = np.linalg.lstsq(X, T, rcond=None)[0]
    else:
        gram = X.T @ X + ridge * np.eye(d)
        L = np.linalg.cholesky(gram)
        rhs = X.T @ T
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    return sol[:, 0] if vector else sol


def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_pdf(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def normal_cdf_pdf(x):
    """Return ``(Phi(x), phi(x))`` for the standard normal."""
    if not math.isfinite(x):
        raise ArgumentError(f"x must be finite, got {x}")
    return normal_cdf(x), normal_pdf(x)


def log_sum_exp(values, axis=None):
    """Numerically stable ``log(sum(exp(values)))``.

    Shifting every input by ``c`` shifts the result by exactly ``c`` whenever
    ``c`` and the maximum are exactly representable after subtraction.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ArgumentError("log_sum_exp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def hungarian_min_assign(cost):
    """Permutation ``perm`` minimising ``sum(cost[i, perm[i]])``."""
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ArgumentError(f"cost must be square, got shape {c.shape}")
    c = as_matrix(c, "cost")
    if c.shape[0] == 0:
        return np.empty(0, dtype=np.intp)
    return _kernels.hungarian(c)


def is_permutation(perm):
    perm = np.asarray(perm)
    return perm.ndim == 1 and np.array_equal(np.sort(perm), np.arange(perm.size))
