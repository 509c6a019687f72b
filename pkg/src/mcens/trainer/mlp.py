"""Rectifier MLP encoders with a linear head, in plain numpy.

Weights are stored as ``(out, in)`` matrices; a forward step is
``h = relu(h @ W.T + b)``. The penultimate features are the output of the
last encoder layer, after its rectifier.

``MLPW`` file layout (little-endian)::

    magic    4 bytes  b"MLPW"
    version  u32      1
    layers   u32      encoder layers + 1 (the head is stored last)
    per layer: u64 out, u64 in, out*in binary64 weights (row-major), out binary64 biases
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, BadMagicError, FormatError, TruncatedError, VersionMismatchError
from ..features import FeatureSet, LogitSet
from ..scoring import LinearHead

MLPW_MAGIC = b"MLPW"
MLPW_VERSION = 1
DEFAULT_WIDTHS = (64, 64, 32)


@dataclass(frozen=True, eq=False)
class MlpParams:
    layers: tuple  # ((W, b), ...) encoder layers
    head: LinearHead
    activation: str = "relu"
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        layers = tuple((np.array(W, dtype=np.float64), np.array(b, dtype=np.float64))
                       for W, b in self.layers)
        if not layers:
            raise ArgumentError("an encoder needs at least one layer")
        for i, (W, b) in enumerate(layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ArgumentError(f"layer {i}: bad shapes W {W.shape}, b {b.shape}")
            if i and W.shape[1] != layers[i - 1][0].shape[0]:
                raise ArgumentError(f"layer {i} input {W.shape[1]} != previous output {layers[i - 1][0].shape[0]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ArgumentError(f"layer {i} has non-finite parameters")
        if self.head.W.shape[1] != layers[-1][0].shape[0]:
            raise ArgumentError("head input does not match the penultimate width")
        if self.activation != "relu":
            raise ArgumentError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def feature_dim(self):
        return self.layers[-1][0].shape[0]

    @property
    def architecture(self):
        return (self.input_dim,) + tuple(W.shape[0] for W, _ in self.layers) + (self.head.K,)

    def arrays(self):
        """Flat list ``[W1, b1, ..., Wh, bh]`` including the head."""
        out = []
        for W, b in self.layers:
            out += [W, b]
        return out + [self.head.W, self.head.b]

    @classmethod
    def from_arrays(cls, arrays, history=()):
        *enc, hW, hb = arrays
        layers = tuple((enc[i], enc[i + 1]) for i in range(0, len(enc), 2))
        return cls(layers, LinearHead(hW, hb), history=history)

    def equal(self, other):
        """Bit-for-bit equality of every parameter."""
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and x.tobytes() == y.tobytes()
                                        for x, y in zip(a, b))


def init_params(input_dim, K, rng, widths=DEFAULT_WIDTHS):
    """He-normal encoder weights, zero biases, small-normal head."""
    layers = []
    prev = input_dim
    for w in widths:
        layers.append((rng.standard_normal((w, prev)) * np.sqrt(2.0 / prev), np.zeros(w)))
        prev = w
    head = LinearHead(rng.standard_normal((K, prev)) * np.sqrt(1.0 / prev), np.zeros(K))
    return MlpParams(tuple(layers), head)


def encode(arrays, X):
    """Forward pass through the encoder part of a flat parameter list.

    Returns the list of post-rectifier activations, input first.
    """
    acts = [X]
    h = X
    for i in range(0, len(arrays) - 2, 2):
        h = np.maximum(h @ arrays[i].T + arrays[i + 1], 0.0)
        acts.append(h)
    return acts


def encode_backward(arrays, acts, grad_feat):
    """Gradients of the encoder weights given ``dL/d features``."""
    grads = [None] * (len(arrays) - 2)
    g = grad_feat
    for li in range((len(arrays) - 2) // 2 - 1, -1, -1):
        g = g * (acts[li + 1] > 0)
        grads[2 * li] = g.T @ acts[li]
        grads[2 * li + 1] = g.sum(axis=0)
        if li:
            g = g @ arrays[2 * li]
    return grads


def _check_inputs(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ArgumentError(f"inputs must be (n, {params.input_dim}), got {X.shape}")
    return X


def forward_features(params, inputs, sample_ids=None):
    """Penultimate (post-rectifier) features as a :class:`FeatureSet`."""
    X = _check_inputs(params, inputs)
    return FeatureSet(encode(params.arrays(), X)[-1], sample_ids)


def forward_logits(params, inputs, sample_ids=None):
    X = _check_inputs(params, inputs)
    feats = encode(params.arrays(), X)[-1]
    return LogitSet(feats @ params.head.W.T + params.head.b, sample_ids)


def same_architecture(a, b):
    return a.architecture == b.architecture


def interpolate_params(a, b, alpha):
    """Elementwise ``(1 - alpha) * a + alpha * b`` over every weight and bias."""
    if not same_architecture(a, b):
        raise ArgumentError(f"architecture mismatch: {a.architecture} vs {b.architecture}")
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return MlpParams.from_arrays(a.arrays())
    if alpha == 1.0:
        return MlpParams.from_arrays(b.arrays())
    # x + alpha (y - x) returns x bit-for-bit when both endpoints agree
    return MlpParams.from_arrays([x + alpha * (y - x) for x, y in zip(a.arrays(), b.arrays())])


# ------------------------------------------------------------------ MLPW I/O

def params_to_bytes(params):
    arrays = params.arrays()
    n_layers = len(arrays) // 2
    out = [struct.pack("<4sII", MLPW_MAGIC, MLPW_VERSION, n_layers)]
    for i in range(n_layers):
        W, b = arrays[2 * i], arrays[2 * i + 1]
        out.append(struct.pack("<QQ", W.shape[0], W.shape[1]))
        out.append(W.astype("<f8").tobytes())
        out.append(b.astype("<f8").tobytes())
    return b"".join(out)


def params_from_bytes(buf):
    if buf[:4] != MLPW_MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MLPW_MAGIC!r}")
    if len(buf) < 12:
        raise TruncatedError("truncated header")
    _, version, n_layers = struct.unpack_from("<4sII", buf)
    if version != MLPW_VERSION:
        raise VersionMismatchError(f"unsupported version {version}")
    if n_layers < 2:
        raise FormatError("need at least one encoder layer and a head")
    off = 12
    arrays = []
    for _ in range(n_layers):
        if len(buf) < off + 16:
            raise TruncatedError("truncated layer header")
        rows, cols = struct.unpack_from("<QQ", buf, off)
        off += 16
        need = 8 * (rows * cols + rows)
        if len(buf) < off + need:
            raise TruncatedError("truncated layer payload")
        W = np.frombuffer(buf, "<f8", rows * cols, off).reshape(rows, cols).astype(np.float64)
        off += 8 * rows * cols
        b = np.frombuffer(buf, "<f8", rows, off).astype(np.float64)
        off += 8 * rows
        arrays += [W, b]
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes")
    return MlpParams.from_arrays(arrays)


def save_params(params, path):
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path):
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
