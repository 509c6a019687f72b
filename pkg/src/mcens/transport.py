"""Entropic optimal transport between two feature distributions.

The pipeline behind :func:`sci_between` is: fit an affine map on anchor
samples, carry the second model's features into the first model's space,
build the pairwise cost, run Sinkhorn scaling, and read off how much of the
transport plan stays on each sample's own counterpart.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ArgumentError, ConditioningError
from .features import align
from .numerics import ridge_solve

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.05
    iterations: int = 100
    marginal_tol: float = 1e-6
    # divide the cost by its largest entry before exponentiating
    rescale: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ArgumentError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.iterations) < 1:
            raise ArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if not self.marginal_tol > 0:
            raise ArgumentError("marginal_tol must be positive")


@dataclass(frozen=True)
class CouplingMatrix:
    P: np.ndarray
    row_masses: np.ndarray
    col_masses: np.ndarray

    @property
    def n(self):
        return self.P.shape[0]

    def marginal_error(self):
        """Largest absolute deviation of row or column sums from the target masses."""
        rows = np.max(np.abs(self.P.sum(axis=1) - self.row_masses))
        cols = np.max(np.abs(self.P.sum(axis=0) - self.col_masses))
        return float(max(rows, cols))

    def write_csv(self, path, ids=None):
        """Dense heat-map CSV: header ``id,<col ids>``, one row per source sample."""
        ids = list(ids) if ids is not None else [str(i) for i in range(self.n)]
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["id"] + ids)
            for sid, row in zip(ids, self.P):
                w.writerow([sid] + [repr(float(x)) for x in row])


@dataclass(frozen=True)
class AffineMap:
    A: np.ndarray
    b: np.ndarray
    anchor_count: int

    def __call__(self, Z):
        return Z @ self.A.T + self.b


def cost_matrix(Z1, Z2, p=2):
    """Pairwise ``L^p`` distances ``C[i, j] = ||Z1_i - Z2_j||_p``.

    ``Z2`` is aligned to ``Z1`` by sample id first, so row ``i`` and column
    ``i`` refer to the same sample.
    """
    if Z1.dim != Z2.dim:
        raise ArgumentError(f"dim mismatch: {Z1.dim} vs {Z2.dim}")
    if not p >= 1:
        raise ArgumentError(f"p must be >= 1, got {p}")
    Z2 = align(Z1, Z2)
    X, Y = Z1.data, Z2.data
    C = np.empty((X.shape[0], Y.shape[0]))
    step = max(1, 2_000_000 // max(1, Y.shape[0] * X.shape[1]))
    for s in range(0, X.shape[0], step):
        diff = np.abs(X[s:s + step, None, :] - Y[None, :, :])
        if p == 2:
            C[s:s + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        else:
            C[s:s + step] = np.sum(diff ** p, axis=2) ** (1.0 / p)
    return C


def sinkhorn(cost, config=SinkhornConfig()):
    """Entropic transport plan between two uniform distributions.

    ``P = diag(u) K diag(v)`` with ``K = exp(-cost / epsilon)``, after
    ``config.iterations`` alternating row/column scalings.

    Raises
    ------
    ConditioningError
        If a kernel row or column underflows to zero.
    """
    C = np.ascontiguousarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise ArgumentError(f"cost must be a non-empty square matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ArgumentError("cost contains non-finite values")
    n = C.shape[0]
    if config.rescale:
        top = C.max()
        if top > 0:
            C = C / top
    K = np.exp(-C / config.epsilon)
    dead = np.flatnonzero(~K.any(axis=1))
    if dead.size:
        raise ConditioningError(f"kernel row {dead[0]} underflows to zero; epsilon too small for the cost scale")
    a = np.full(n, 1.0 / n)
    b = np.full(n, 1.0 / n)
    u, v, bad = _kernels.sinkhorn_scaling(K, a, b, int(config.iterations))
    if bad != -1:
        where = f"row {bad}" if bad >= 0 else f"column {-2 - bad}"
        raise ConditioningError(f"kernel product vanished at {where}")
    P = np.asarray(u)[:, None] * K * np.asarray(v)[None, :]
    plan = CouplingMatrix(P, a, b)
    err = plan.marginal_error()
    if err > config.marginal_tol:
        log.info("sinkhorn marginal error %.3g exceeds tolerance %.3g after %d iterations",
                 err, config.marginal_tol, config.iterations)
    return plan


def affine_calibrate(anchors1, anchors2, ridge=DEFAULT_RIDGE):
    """Fit ``z1 ~ (I + D) z2 + b`` on anchor samples.

    The ridge penalty acts on the deviation ``D`` and on ``b``, so identical
    anchor sets give the identity map exactly.
    """
    anchors2 = align(anchors1, anchors2)
    if anchors1.n < 2:
        raise ArgumentError(f"need at least 2 anchors, got {anchors1.n}")
    if anchors1.dim != anchors2.dim:
        raise ArgumentError(f"dim mismatch: {anchors1.dim} vs {anchors2.dim}")
    Z1, Z2 = anchors1.data, anchors2.data
    design = np.hstack([Z2, np.ones((Z2.shape[0], 1))])
    X = ridge_solve(design, Z1 - Z2, ridge)
    d = Z1.shape[1]
    A = np.eye(d) + X[:d].T
    return AffineMap(A, X[d].copy(), anchors1.n)


def apply_affine(Z, amap):
    if Z.dim != amap.A.shape[1]:
        raise ArgumentError(f"dim mismatch: features {Z.dim}, map {amap.A.shape[1]}")
    return Z.with_data(amap(Z.data))


def self_coupling_index(plan, k=1):
    """Scaled diagonal mass of a coupling after keeping each row's top-``k`` entries.

    Ties in a row are resolved toward the lowest column index. The result
    ``(n / k) * trace`` is clamped to ``[0, 1]``.
    """
    P = plan.P if isinstance(plan, CouplingMatrix) else np.asarray(plan, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ArgumentError("coupling must be square")
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ArgumentError(f"k must lie in [1, {n}], got {k}")
    top = np.argsort(-P, axis=1, kind="stable")[:, :k]
    keeps_diag = np.any(top == np.arange(n)[:, None], axis=1)
    trace = float(np.sum(np.diag(P)[keeps_diag]))
    return min(1.0, max(0.0, n / k * trace))


@dataclass(frozen=True)
class SciResult:
    sci: float
    plan: CouplingMatrix
    amap: AffineMap
    ids: tuple


def sci_between(features1, features2, anchors, config=SinkhornConfig(), ridge=DEFAULT_RIDGE, k=1,
                return_details=False):
    """Self-coupling index between two models' features of the same samples.

    ``anchors`` are sample ids used only for calibration; they are removed
    from the evaluated set. Samples are processed in sorted-id order so the
    result does not depend on input row order.
    """
    anchors = sorted(set(anchors))
    amap = affine_calibrate(features1.select(anchors), features2.select(anchors), ridge)
    eval_ids = sorted(set(features1.sample_ids) - set(anchors))
    if not eval_ids:
        raise ArgumentError("no samples left to evaluate after removing anchors")
    e1 = features1.select(eval_ids)
    e2 = apply_affine(features2.select(eval_ids), amap)
    plan = sinkhorn(cost_matrix(e1, e2), config)
    value = self_coupling_index(plan, k)
    if return_details:
        return SciResult(value, plan, amap, tuple(eval_ids))
    return value


def pick_anchors(ids, count, rng):
    """Draw ``count`` distinct anchor ids with a numpy Generator."""
    ids = sorted(ids)
    if count > len(ids):
        raise ArgumentError(f"cannot draw {count} anchors from {len(ids)} samples")
    idx = rng.choice(len(ids), size=count, replace=False)
    return [ids[i] for i in sorted(idx)]
