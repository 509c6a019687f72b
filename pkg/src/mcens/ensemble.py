"""Feature averaging, detector bias-variance bookkeeping and member selection."""
import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ArgumentError
from .features import FeatureSet


@dataclass(frozen=True)
class DetectorDistribution:
    """Per-sample probability that a binary detector fires (``P(G = 1 | x)``)."""

    sample_ids: tuple
    p_positive: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_positive, dtype=np.float64)
        if p.ndim != 1 or p.size != len(self.sample_ids):
            raise ArgumentError("p_positive must be 1-D and match sample_ids")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ArgumentError("probabilities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "p_positive", p)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))

    def probs(self):
        """``(n, 2)`` array of ``P(y = 0 | x), P(y = 1 | x)``."""
        return np.stack([1.0 - self.p_positive, self.p_positive], axis=1)


@dataclass(frozen=True)
class EnsembleSpec:
    member_ids: tuple
    selection_lambda: float
    objective: float = float("nan")

    def __post_init__(self):
        ids = tuple(self.member_ids)
        if len(ids) < 2 or len(set(ids)) != len(ids):
            raise ArgumentError("an ensemble needs at least 2 distinct members")
        if self.selection_lambda < 0:
            raise ArgumentError("selection_lambda must be nonnegative")
        object.__setattr__(self, "member_ids", ids)

    @property
    def M(self):
        return len(self.member_ids)

    def to_dict(self):
        return {"members": list(self.member_ids), "M": self.M,
                "lambda": self.selection_lambda, "objective": self.objective}


def average_features(members):
    """Elementwise mean of member features sharing shape and id order."""
    members = list(members)
    if not members:
        raise ArgumentError("no members to average")
    first = members[0]
    for m in members[1:]:
        if m.data.shape != first.data.shape:
            raise ArgumentError(f"shape mismatch: {m.data.shape} vs {first.data.shape}")
        if m.sample_ids != first.sample_ids:
            raise AlignmentError("members do not share the same sample id order")
    # mean of deviations from the first member, so identical members average to it exactly
    dev = np.stack([m.data - first.data for m in members[1:]]) if len(members) > 1 else None
    mean = first.data if dev is None else first.data + dev.sum(axis=0) / len(members)
    return FeatureSet(mean, first.sample_ids)


def _check_aligned(dists):
    ids = dists[0].sample_ids
    for d in dists[1:]:
        if d.sample_ids != ids:
            raise AlignmentError("detector distributions are not aligned by sample id")


def detector_loss_decomposition(detector, truth, weights):
    """Split the expected 0-1 loss of a randomised detector.

    Returns ``loss`` (the sum of the three parts), ``bias_sq``, ``variance``,
    ``sigma_sq`` and ``direct_loss``, the latter computed as
    ``1 - sum_x P(x) sum_y P_H(y|x) P_T(y|x)``.
    """
    _check_aligned([detector, truth])
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != detector.p_positive.shape or np.any(w < 0):
        raise ArgumentError("weights must be a nonnegative array over the samples")
    if abs(math.fsum(w) - 1.0) > 1e-9:
        raise ArgumentError(f"weights must sum to 1 (got {math.fsum(w)!r})")
    ph, pt = detector.probs(), truth.probs()
    bias_sq = math.fsum(w * 0.5 * np.sum((ph - pt) ** 2, axis=1))
    variance = math.fsum(w * 0.5 * (1.0 - np.sum(ph ** 2, axis=1)))
    sigma_sq = math.fsum(w * 0.5 * (1.0 - np.sum(pt ** 2, axis=1)))
    direct = 1.0 - math.fsum(w * np.sum(ph * pt, axis=1))
    return {"loss": bias_sq + variance + sigma_sq, "bias_sq": bias_sq, "variance": variance,
            "sigma_sq": sigma_sq, "direct_loss": direct}


def ensemble_variance_decomposition(members):
    """Per-sample variance split of a probability-averaging detector ensemble.

    Each field is an ``(n,)`` array. ``ensemble_variance`` comes from the
    member-mean / covariance split; ``ensemble_variance_direct`` from
    ``1 - sum_y (mean_i P_i(y|x))^2``. ``lower_bound`` is
    ``member_variance_mean / M``; ``upper_bound_holds`` flags samples where
    the ensemble variance does not exceed the mean member variance, which is
    not guaranteed for anti-correlated members.
    """
    members = list(members)
    M = len(members)
    if M < 2:
        raise ArgumentError(f"an ensemble needs M >= 2 members, got {M}")
    _check_aligned(members)
    P = np.stack([m.probs() for m in members])  # (M, n, 2)
    gram = np.einsum("iny,jny->ijn", P, P)      # sum_y P_i P_j
    self_terms = 1.0 - np.diagonal(gram, axis1=0, axis2=1).T  # (M, n)
    member_var = self_terms.mean(axis=0)
    off = ~np.eye(M, dtype=bool)
    covariance = (1.0 - gram[off]).sum(axis=0) / M
    ens = (member_var + covariance) / M
    direct = 1.0 - np.sum(P.mean(axis=0) ** 2, axis=1)
    lower = member_var / M
    return {
        "sample_ids": members[0].sample_ids,
        "member_variance_mean": member_var,
        "covariance_term": covariance,
        "ensemble_variance": ens,
        "ensemble_variance_direct": direct,
        "lower_bound": lower,
        "upper_bound_holds": ens <= member_var + 1e-12,
    }


def average_detectors(members):
    """Probability-averaging ensemble of detectors."""
    members = list(members)
    _check_aligned(members)
    return DetectorDistribution(members[0].sample_ids,
                                np.mean([m.p_positive for m in members], axis=0))


def icc_shrinkage_factor(M, rho):
    """Variance ratio ``(1 + (M - 1) rho) / M`` of an M-member average."""
    if M < 1:
        raise ArgumentError(f"M must be >= 1, got {M}")
    if not 0.0 <= rho <= 1.0:
        raise ArgumentError(f"rho must lie in [0, 1], got {rho}")
    return (1.0 + (M - 1) * rho) / M


def estimate_icc(members):
    """One-way random-effects intraclass correlation across ensemble members.

    For each feature dimension the samples are the groups and the members are
    the repeated measurements: ``ICC = (MSB - MSW) / (MSB + (M - 1) MSW)``.
    The per-dimension values are averaged and clamped to ``[0, 1]``.
    """
    members = list(members)
    M = len(members)
    if M < 2:
        raise ArgumentError(f"need at least 2 members, got {M}")
    shape = members[0].data.shape
    if any(m.data.shape != shape for m in members):
        raise ArgumentError("members differ in shape")
    X = np.stack([m.data for m in members])  # (M, n, dim)
    n = shape[0]
    if n < 2:
        raise ArgumentError("need at least 2 samples")
    group_mean = X.mean(axis=0)
    grand = group_mean.mean(axis=0)
    msb = M * np.sum((group_mean - grand) ** 2, axis=0) / (n - 1)
    msw = np.sum((X - group_mean) ** 2, axis=(0, 1)) / (n * (M - 1))
    denom = msb + (M - 1) * msw
    with np.errstate(invalid="ignore", divide="ignore"):
        icc = np.where(denom > 0, (msb - msw) / denom, 1.0)
    return float(np.clip(np.mean(icc), 0.0, 1.0))


# ---------------------------------------------------------------- selection

def _pair_value(pairwise_sci, a, b):
    if (a, b) in pairwise_sci:
        return pairwise_sci[(a, b)]
    if (b, a) in pairwise_sci:
        return pairwise_sci[(b, a)]
    raise ArgumentError(f"missing pairwise SCI for ({a!r}, {b!r})")


def selection_objective(members, pool_losses, pairwise_sci, lam):
    """Mean member loss plus ``lam`` times the mean off-diagonal SCI.

    Ordered pairs are looked up individually, so an asymmetric table
    contributes both ``C(a, b)`` and ``C(b, a)``.
    """
    M = len(members)
    mean_loss = math.fsum(pool_losses[m] for m in members) / M
    pair_sum = math.fsum(_pair_value(pairwise_sci, a, b)
                         for a, b in itertools.permutations(members, 2))
    return mean_loss + lam * pair_sum / (M * (M - 1))


def select_ensemble(pool_losses, pairwise_sci, M, lam):
    """Exhaustively choose the ``M``-subset minimising the selection objective.

    Ties go to the lexicographically smallest sorted member tuple.
    """
    pool = sorted(pool_losses)
    if M < 2:
        raise ArgumentError("M must be >= 2")
    if M > len(pool):
        raise ArgumentError(f"M = {M} exceeds pool size {len(pool)}")
    if lam < 0:
        raise ArgumentError("lambda must be nonnegative")
    for a, b in itertools.combinations(pool, 2):
        _pair_value(pairwise_sci, a, b)
    best, best_obj = None, math.inf
    for subset in itertools.combinations(pool, M):
        obj = selection_objective(subset, pool_losses, pairwise_sci, lam)
        if obj < best_obj:
            best, best_obj = subset, obj
    return EnsembleSpec(best, lam, best_obj)


def read_pairwise_sci(path):
    """Parse a ``id_a,id_b,sci`` CSV into an ordered-pair dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id_a", "id_b", "sci"]:
            raise ArgumentError(f"{path}: header must be 'id_a,id_b,sci'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ArgumentError(f"{path}: line {lineno} needs 3 cells")
            out[(row[0], row[1])] = float(row[2])
    return out


def write_pairwise_sci(pairs, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id_a", "id_b", "sci"])
        for (a, b), v in sorted(pairs.items()):
            w.writerow([a, b, repr(float(v))])
