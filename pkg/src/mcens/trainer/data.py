"""Synthetic blob benchmark used in place of image datasets."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError
from ..features import LabelSet

ID_RADIUS = 6.0
RING_RADIUS = 12.0
SHIFT = 20.0
OOD_KINDS = ("ring", "shifted")


@dataclass(frozen=True)
class DataSpec:
    classes: int = 3
    per_class: int = 200
    test_per_class: int = 200
    dim: int = 8
    ood_kind: tuple = OOD_KINDS
    ood_count: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ArgumentError("need at least 2 classes")
        if self.dim < 2:
            raise ArgumentError("input dim must be >= 2")
        kinds = (self.ood_kind,) if isinstance(self.ood_kind, str) else tuple(self.ood_kind)
        for k in kinds:
            if k not in OOD_KINDS:
                raise ArgumentError(f"unknown ood_kind {k!r}; expected one of {OOD_KINDS}")
        object.__setattr__(self, "ood_kind", kinds)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    inputs: np.ndarray        # (n, d) all ID samples
    labels: LabelSet
    split: np.ndarray         # "train" / "test" per ID row
    ood_inputs: dict = field(default_factory=dict)  # kind -> (m, d)
    spec: DataSpec = None

    def _part(self, tag):
        rows = np.flatnonzero(self.split == tag)
        ids = [self.labels.sample_ids[r] for r in rows]
        return self.inputs[rows], LabelSet(ids, self.labels.labels[rows], self.labels.K)

    def train(self):
        return self._part("train")

    def test(self):
        return self._part("test")

    def ood(self, kind):
        X = self.ood_inputs[kind]
        return X, [f"ood-{kind}-{i:05d}" for i in range(X.shape[0])]

    def to_bytes(self):
        parts = [self.inputs.tobytes(), self.labels.labels.tobytes(),
                 "\n".join(self.labels.sample_ids).encode(), "\n".join(self.split).encode()]
        for k in sorted(self.ood_inputs):
            parts += [k.encode(), self.ood_inputs[k].tobytes()]
        return b"|".join(parts)


def _blobs(rng, K, n, d):
    angles = 2 * math.pi * np.arange(K) / K
    centers = np.zeros((K, d))
    centers[:, 0] = ID_RADIUS * np.cos(angles)
    centers[:, 1] = ID_RADIUS * np.sin(angles)
    y = np.repeat(np.arange(K), n)
    X = centers[y] + rng.standard_normal((K * n, d))
    return X, y


def gen_synthetic(spec=DataSpec()):
    """Gaussian blobs on a circle plus far-away OOD inputs.

    ID class ``k`` is a unit-variance blob centred at radius 6 and angle
    ``2 pi k / K`` in the first two coordinates; remaining coordinates are
    standard normal noise. OOD ``ring`` samples sit at radius 12 with
    uniform angle, ``shifted`` samples are ID blobs moved by +20 in both
    leading coordinates.
    """
    rng = np.random.default_rng([spec.seed, 0x5D])
    K, d = spec.classes, spec.dim
    Xtr, ytr = _blobs(rng, K, spec.per_class, d)
    Xte, yte = _blobs(rng, K, spec.test_per_class, d)
    X = np.vstack([Xtr, Xte])
    y = np.concatenate([ytr, yte])
    ids = [f"id-{i:05d}" for i in range(X.shape[0])]
    split = np.array(["train"] * Xtr.shape[0] + ["test"] * Xte.shape[0])
    ood = {}
    for kind in spec.ood_kind:
        m = spec.ood_count
        if kind == "ring":
            theta = rng.uniform(0, 2 * math.pi, m)
            Z = rng.standard_normal((m, d))
            Z[:, 0] = RING_RADIUS * np.cos(theta) + rng.standard_normal(m)
            Z[:, 1] = RING_RADIUS * np.sin(theta) + rng.standard_normal(m)
        else:
            Z, _ = _blobs(rng, K, -(-m // K), d)
            Z = Z[rng.permutation(Z.shape[0])[:m]]
            Z[:, :2] += SHIFT
        ood[kind] = Z
    return SyntheticDataset(X, LabelSet(ids, y, K), split, ood, spec)
