"""Linear interpolation barriers and permutation alignment of hidden units."""
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError
from ..numerics import hungarian_min_assign
from .losses import cross_entropy_grad
from .mlp import MlpParams, encode, interpolate_params, same_architecture

DEFAULT_GRID = 25


@dataclass(frozen=True)
class BarrierResult:
    barrier: float
    alpha_star: float
    alphas: np.ndarray
    losses: np.ndarray

    @property
    def curve(self):
        return list(zip(self.alphas.tolist(), self.losses.tolist()))

    def to_csv(self):
        lines = ["alpha,loss"] + [f"{a!r},{l!r}" for a, l in self.curve]
        return "\n".join(lines) + "\n"


def task_loss(params, X, y):
    arrays = params.arrays()
    logits = encode(arrays, X)[-1] @ arrays[-2].T + arrays[-1]
    return cross_entropy_grad(logits, y)[0]


def loss_barrier(a, b, X, y, grid_points=DEFAULT_GRID):
    """Largest excess of the interpolated loss over the endpoint mean.

    The loss is the target-task cross-entropy on ``(X, y)`` evaluated at
    ``grid_points`` evenly spaced interpolation weights in ``[0, 1]``.
    """
    if grid_points < 3:
        raise ArgumentError(f"grid_points must be >= 3, got {grid_points}")
    if not same_architecture(a, b):
        raise ArgumentError(f"architecture mismatch: {a.architecture} vs {b.architecture}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    alphas = np.linspace(0.0, 1.0, grid_points)
    losses = np.array([task_loss(interpolate_params(a, b, float(t)), X, y) for t in alphas])
    i = int(np.argmax(losses))
    barrier = float(losses[i] - 0.5 * (losses[0] + losses[-1]))
    return BarrierResult(barrier, float(alphas[i]), alphas, losses)


def permute_hidden(params, perms):
    """Reorder hidden units: layer ``l`` output ``i`` becomes old unit ``perms[l][i]``."""
    arrays = [x.copy() for x in params.arrays()]
    n_enc = len(arrays) // 2 - 1
    if len(perms) != n_enc:
        raise ArgumentError(f"expected {n_enc} permutations, got {len(perms)}")
    for l, p in enumerate(perms):
        p = np.asarray(p)
        arrays[2 * l] = arrays[2 * l][p]
        arrays[2 * l + 1] = arrays[2 * l + 1][p]
        arrays[2 * l + 2] = arrays[2 * l + 2][:, p]
    return MlpParams.from_arrays(arrays)


def weight_match_permute(reference, target, return_perms=False):
    """Permute ``target``'s hidden units to line up with ``reference``.

    Layers are matched in order. For each layer, the cost of pairing
    reference unit ``i`` with target unit ``j`` is the negative inner product
    of their incoming weights and bias, after the previous layer's
    permutation has been applied to the target's inputs. The network
    function of ``target`` is unchanged.
    """
    if not same_architecture(reference, target):
        raise ArgumentError(f"architecture mismatch: {reference.architecture} vs {target.architecture}")
    ref = reference.arrays()
    arrays = [x.copy() for x in target.arrays()]
    perms = []
    n_enc = len(arrays) // 2 - 1
    for l in range(n_enc):
        Wr = np.hstack([ref[2 * l], ref[2 * l + 1][:, None]])
        Wt = np.hstack([arrays[2 * l], arrays[2 * l + 1][:, None]])
        perm = hungarian_min_assign(-(Wr @ Wt.T))
        arrays[2 * l] = arrays[2 * l][perm]
        arrays[2 * l + 1] = arrays[2 * l + 1][perm]
        arrays[2 * l + 2] = arrays[2 * l + 2][:, perm]
        perms.append(perm)
    out = MlpParams.from_arrays(arrays, history=target.history)
    return (out, perms) if return_perms else out
