"""Post-hoc OOD scores, thresholding and detection metrics.

All scores follow one convention: larger means more in-distribution.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ArgumentError, ConditioningError, FitError
from .features import LogitSet, l2_normalize
from .numerics import log_sum_exp

METRICS = ("MSP", "MAHALANOBIS", "ENERGY", "KNN")
DEFAULT_SHRINKAGE = 0.05


@dataclass(frozen=True)
class LinearHead:
    W: np.ndarray  # (K, dim)
    b: np.ndarray  # (K,)

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ArgumentError(f"head shapes do not match: W {W.shape}, b {b.shape}")
        if W.shape[0] < 2:
            raise ArgumentError("a head needs K >= 2 classes")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ArgumentError("head has non-finite parameters")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def K(self):
        return self.W.shape[0]

    def logits(self, features):
        if features.dim != self.W.shape[1]:
            raise ArgumentError(f"feature dim {features.dim} != head input {self.W.shape[1]}")
        return LogitSet(features.data @ self.W.T + self.b, features.sample_ids)


@dataclass(frozen=True)
class ClassStats:
    means: np.ndarray           # (K, dim)
    shared_cov: np.ndarray      # (dim, dim)
    shared_cov_inv: np.ndarray  # (dim, dim)
    shrinkage: float
    whitener: np.ndarray        # inverse Cholesky factor, W.T @ W == shared_cov_inv

    @classmethod
    def from_moments(cls, means, cov, shrinkage=0.0):
        """Build stats from given means and covariance, blending toward its diagonal."""
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (means.shape[1], means.shape[1]):
            raise ArgumentError(f"covariance shape {cov.shape} does not match dim {means.shape[1]}")
        shrunk = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
        shrunk = 0.5 * (shrunk + shrunk.T)
        try:
            L = np.linalg.cholesky(shrunk)
        except np.linalg.LinAlgError:
            raise ConditioningError("shared covariance is not positive definite after shrinkage") from None
        if not np.all(np.isfinite(L)) or np.min(np.diag(L)) <= 0:
            raise ConditioningError("shared covariance is not positive definite after shrinkage")
        whitener = np.linalg.inv(L)
        inv = whitener.T @ whitener
        err = np.max(np.abs(shrunk @ inv - np.eye(len(shrunk))))
        if not err <= 1e-6:
            raise ConditioningError(f"covariance inverse check failed (max |C C^-1 - I| = {err:.3g})")
        return cls(means, shrunk, inv, float(shrinkage), whitener)


@dataclass(frozen=True)
class ScoreVector:
    sample_ids: tuple
    scores: np.ndarray
    metric: str

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 1 or s.size != len(self.sample_ids):
            raise ArgumentError("scores and ids differ in length")
        if not np.all(np.isfinite(s)):
            raise ArgumentError("scores must be finite")
        if self.metric not in METRICS:
            raise ArgumentError(f"unknown metric {self.metric!r}")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    def __len__(self):
        return self.scores.size

    def select(self, ids):
        idx = {sid: i for i, sid in enumerate(self.sample_ids)}
        return ScoreVector(list(ids), self.scores[[idx[i] for i in ids]], self.metric)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["id", "score"])
            for sid, s in zip(self.sample_ids, self.scores):
                w.writerow([sid, repr(float(s))])


def read_scores_csv(path, metric):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["id", "score"]:
        raise ArgumentError(f"{path}: header must be 'id,score'")
    body = [r for r in rows[1:] if r]
    return ScoreVector([r[0] for r in body], [float(r[1]) for r in body], metric)


def _scores(values):
    return np.asarray(values.scores if isinstance(values, ScoreVector) else values, dtype=np.float64)


# ------------------------------------------------------------------ fitting

def fit_class_stats(train, labels, shrinkage=DEFAULT_SHRINKAGE):
    """Per-class means and the shrunk pooled within-class covariance.

    The pooled covariance is the maximum-likelihood estimate
    ``sum_k sum_{i in k} (z_i - mu_k)(z_i - mu_k)^T / N``, then blended as
    ``(1 - shrinkage) * cov + shrinkage * diag(cov)``.
    """
    if not 0.0 <= shrinkage < 1.0:
        raise ArgumentError(f"shrinkage must lie in [0, 1), got {shrinkage}")
    labels = labels.select(train.sample_ids) if labels.sample_ids != train.sample_ids else labels
    y = labels.labels
    Z = train.data
    means = np.empty((labels.K, train.dim))
    centered = np.empty_like(Z)
    for k in range(labels.K):
        rows = np.flatnonzero(y == k)
        if rows.size == 0:
            raise FitError(f"class {k} has no samples")
        if rows.size < 2:
            raise FitError(f"class {k} has a single sample; need at least 2")
        means[k] = Z[rows].mean(axis=0)
        centered[rows] = Z[rows] - means[k]
    cov = centered.T @ centered / Z.shape[0]
    return ClassStats.from_moments(means, cov, shrinkage)


# ------------------------------------------------------------------ scorers

def msp_score(logits):
    """Maximum softmax probability per row."""
    if logits.K < 2:
        raise ArgumentError("MSP needs K >= 2")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    p = e.max(axis=1) / e.sum(axis=1)
    return ScoreVector(logits.sample_ids, p, "MSP")


def mahalanobis_score(features, stats):
    """``max_k -(z - mu_k)^T cov^{-1} (z - mu_k)``; always ``<= 0``."""
    if features.dim != stats.means.shape[1]:
        raise ArgumentError(f"feature dim {features.dim} != stats dim {stats.means.shape[1]}")
    Z = features.data
    best = np.full(features.n, -np.inf)
    for mu in stats.means:
        w = (Z - mu) @ stats.whitener.T
        best = np.maximum(best, -np.einsum("ij,ij->i", w, w))
    return ScoreVector(features.sample_ids, best, "MAHALANOBIS")


def energy_score(logits):
    """Negative energy ``log sum_k exp(logit_k)``."""
    if logits.K < 2:
        raise ArgumentError("energy score needs K >= 2")
    return ScoreVector(logits.sample_ids, log_sum_exp(logits.data, axis=1), "ENERGY")


def knn_score(test, train, k=1, normalize=True):
    """Negative distance to the k-th nearest training feature.

    With ``normalize`` both sets are projected onto the unit sphere first.
    """
    if not 1 <= k <= train.n:
        raise ArgumentError(f"k must lie in [1, {train.n}], got {k}")
    if test.dim != train.dim:
        raise ArgumentError(f"dim mismatch: test {test.dim}, train {train.dim}")
    if normalize:
        test, train = l2_normalize(test), l2_normalize(train)
    r = _kernels.kth_neighbor_distance(np.ascontiguousarray(test.data),
                                       np.ascontiguousarray(train.data), int(k))
    return ScoreVector(test.sample_ids, -r, "KNN")


def threshold_detect(scores, tau):
    """In-distribution decision: ``score > tau`` (strict)."""
    return _scores(scores) > tau


# ------------------------------------------------------------------ metrics

def _mann_whitney(a, b):
    """Count of pairs with a > b plus half the ties."""
    both = np.concatenate([a, b])
    order = np.argsort(both, kind="mergesort")
    sorted_vals = both[order]
    ranks = np.empty(both.size)
    # average ranks over tie groups
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], both.size]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return math.fsum(ranks[:a.size]) - a.size * (a.size + 1) / 2.0


def auroc(id_scores, ood_scores):
    """Probability that a random ID score exceeds a random OOD score (ties count half)."""
    a, b = _scores(id_scores), _scores(ood_scores)
    if a.size == 0 or b.size == 0:
        raise ArgumentError("auroc needs nonempty ID and OOD scores")
    total = float(a.size) * float(b.size)
    u_ab = _mann_whitney(a, b)
    u_ba = total - u_ab
    # evaluate the smaller side directly so auroc(a, b) + auroc(b, a) == 1 exactly
    if u_ab <= u_ba:
        return u_ab / total
    return 1.0 - u_ba / total


def fpr_at_tpr(id_scores, ood_scores, tpr_target=0.95, return_tau=False):
    """OOD acceptance rate at the largest threshold keeping ``tpr_target`` of ID.

    A sample counts as ID iff ``score >= tau``.
    """
    a, b = _scores(id_scores), _scores(ood_scores)
    if a.size == 0 or b.size == 0:
        raise ArgumentError("fpr_at_tpr needs nonempty ID and OOD scores")
    if not 0.0 < tpr_target <= 1.0:
        raise ArgumentError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    needed = math.ceil(round(tpr_target * a.size, 9))
    tau = float(np.sort(a)[::-1][needed - 1])
    fpr = np.count_nonzero(b >= tau) / b.size
    return (fpr, tau) if return_tau else fpr


def evaluate(id_scores, ood_scores, tpr_target=0.95):
    """JSON-ready detection summary for one metric."""
    fpr, tau = fpr_at_tpr(id_scores, ood_scores, tpr_target, return_tau=True)
    metric = id_scores.metric if isinstance(id_scores, ScoreVector) else None
    return {
        "metric": metric,
        "auroc": auroc(id_scores, ood_scores),
        "fpr95": fpr,
        "n_id": int(_scores(id_scores).size),
        "n_ood": int(_scores(ood_scores).size),
        "tau": tau,
    }


def score_features(metric, features, *, logits=None, train=None, labels=None, stats=None,
                   k=1, normalize=True, shrinkage=DEFAULT_SHRINKAGE):
    """Dispatch to a scorer by metric name."""
    metric = metric.upper()
    if metric == "MSP":
        return msp_score(logits)
    if metric == "ENERGY":
        return energy_score(logits)
    if metric == "MAHALANOBIS":
        if stats is None:
            stats = fit_class_stats(train, labels, shrinkage)
        return mahalanobis_score(features, stats)
    if metric == "KNN":
        return knn_score(features, train, k, normalize)
    raise ArgumentError(f"unknown metric {metric!r}")
