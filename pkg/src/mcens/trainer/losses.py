"""Training criteria with analytic gradients.

Each ``*_grad`` function returns ``(loss, gradient)`` with the gradient taken
with respect to the raw input array (logits or embeddings).
"""
import numpy as np

from ..errors import ArgumentError
from ..numerics import log_sum_exp


def cross_entropy_grad(logits, y):
    """Mean negative log-softmax of the true class and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    n = logits.shape[0]
    lse = log_sum_exp(logits, axis=1)
    loss = float(np.mean(lse - logits[np.arange(n), y]))
    probs = np.exp(logits - lse[:, None])
    probs[np.arange(n), y] -= 1.0
    return loss, probs / n


def cross_entropy_loss(logits, labels):
    """Cross-entropy of a :class:`LogitSet` against a :class:`LabelSet`."""
    if labels.sample_ids != logits.sample_ids:
        labels = labels.select(logits.sample_ids)
    return cross_entropy_grad(logits.data, labels.labels)[0]


def _contrastive(E, positives, temperature):
    """Shared core: mean over anchors of ``-mean_p s_ip + logsumexp_{a != i} s_ia``."""
    if not temperature > 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    S = E @ E.T / temperature
    np.fill_diagonal(S, -np.inf)
    npos = positives.sum(axis=1)
    valid = npos > 0
    if not np.any(valid):
        raise ArgumentError("no anchor has a positive")
    lse = log_sum_exp(S, axis=1)
    Sfin = np.where(positives, S, 0.0)
    per_anchor = -Sfin[valid].sum(axis=1) / npos[valid] + lse[valid]
    n_valid = int(valid.sum())
    loss = float(per_anchor.sum() / n_valid)

    G = np.exp(S - lse[:, None])
    G[valid] -= positives[valid] / npos[valid, None]
    G[~valid] = 0.0
    G /= n_valid
    grad = (G + G.T) @ E / temperature
    return loss, grad


def nt_xent_grad(embeddings, temperature):
    """Normalised-temperature cross entropy for interleaved view pairs.

    Rows ``2i`` and ``2i + 1`` are two views of sample ``i``; every other row
    is a negative and self-similarity is excluded.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] % 2:
        raise ArgumentError("embeddings must have an even number of rows (2B x dim)")
    if E.shape[0] < 4:
        raise ArgumentError("NT-Xent needs B >= 2 so that negatives exist")
    N = E.shape[0]
    pos = np.zeros((N, N), dtype=bool)
    idx = np.arange(N)
    pos[idx, idx ^ 1] = True
    return _contrastive(E, pos, temperature)


def nt_xent_loss(embeddings, temperature):
    return nt_xent_grad(embeddings, temperature)[0]


def _row_labels(labels, N):
    y = np.asarray(labels)
    if y.size == N // 2:
        return np.repeat(y, 2)
    if y.size == N:
        return y
    raise ArgumentError(f"labels must have length B={N // 2} or 2B={N}, got {y.size}")


def supcon_grad(embeddings, labels, temperature):
    """Supervised contrastive loss with every same-label row as a positive.

    ``labels`` has one entry per sample (length B, expanded to both views)
    or one per row. Anchors without any positive are skipped.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 2:
        raise ArgumentError("embeddings must be a 2-D array with at least 2 rows")
    N = E.shape[0]
    y = _row_labels(labels, N)
    pos = y[:, None] == y[None, :]
    np.fill_diagonal(pos, False)
    if not pos.any():
        raise ArgumentError("every label is a singleton; SupCon has no positives")
    return _contrastive(E, pos, temperature)


def supcon_loss(embeddings, labels, temperature):
    return supcon_grad(embeddings, labels, temperature)[0]

