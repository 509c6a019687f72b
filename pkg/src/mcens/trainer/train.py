"""Deterministic minibatch SGD for the three training criteria."""
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ArgumentError, TrainingError
from .losses import cross_entropy_grad, nt_xent_grad, supcon_grad
from .mlp import DEFAULT_WIDTHS, MlpParams, encode, encode_backward, init_params

CRITERIA = ("SUPCE", "SIMCLR", "SUPCON")

# stream tags for np.random.default_rng([seed, tag, criterion index])
_INIT, _ORDER, _AUG, _HEAD = 1, 2, 3, 4
_MIN_NORM = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    criterion: str = "SUPCE"
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.05
    cosine: bool = True
    momentum: float = 0.9
    weight_decay: float = 1e-3
    temperature: float = 0.5
    augment_noise_sigma: float = 0.5
    augment_drop_prob: float = 0.5
    head_epochs: int = 100
    head_learning_rate: float = 0.05
    widths: tuple = DEFAULT_WIDTHS
    seed: int = 0

    def __post_init__(self):
        crit = str(self.criterion).upper()
        if crit not in CRITERIA:
            raise ArgumentError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        object.__setattr__(self, "criterion", crit)
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.temperature > 0:
            raise ArgumentError("temperature must be positive")
        if not 0.0 <= self.augment_drop_prob <= 1.0:
            raise ArgumentError("augment_drop_prob must lie in [0, 1]")
        if self.augment_noise_sigma < 0:
            raise ArgumentError("augment_noise_sigma must be nonnegative")
        if self.epochs < 1 or self.batch_size < 2:
            raise ArgumentError("epochs must be >= 1 and batch_size >= 2")
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be positive")


def _lr(cfg_lr, epoch, epochs, cosine):
    if not cosine:
        return cfg_lr
    return cfg_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


class _Sgd:
    def __init__(self, arrays, momentum, weight_decay):
        self.arrays = [a.copy() for a in arrays]
        self.vel = [np.zeros_like(a) for a in arrays]
        self.momentum = momentum
        self.weight_decay = weight_decay

    def step(self, grads, lr, indices=None):
        for i in (range(len(self.arrays)) if indices is None else indices):
            g = grads[i]
            if self.weight_decay and self.arrays[i].ndim == 2:
                g = g + self.weight_decay * self.arrays[i]
            self.vel[i] = self.momentum * self.vel[i] + g
            self.arrays[i] -= lr * self.vel[i]


def _check(loss, epoch):
    if not math.isfinite(loss):
        raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch=epoch)


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        if idx.size >= 2:
            yield idx


def _augment(rng, X, sigma, drop):
    noisy = X + sigma * rng.standard_normal(X.shape)
    if drop > 0:
        noisy = noisy * (rng.random(X.shape) >= drop)
    return noisy


def _fit_supce(arrays, X, y, cfg, rng_order):
    opt = _Sgd(arrays, cfg.momentum, cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        lr = _lr(cfg.learning_rate, epoch, cfg.epochs, cfg.cosine)
        total, count = 0.0, 0
        for idx in _batches(rng_order, X.shape[0], cfg.batch_size):
            a = opt.arrays
            acts = encode(a, X[idx])
            logits = acts[-1] @ a[-2].T + a[-1]
            loss, dlogits = cross_entropy_grad(logits, y[idx])
            _check(loss, epoch + 1)
            grad_feat = dlogits @ a[-2]
            grads = encode_backward(a, acts, grad_feat) + [dlogits.T @ acts[-1], dlogits.sum(axis=0)]
            opt.step(grads, lr)
            total += loss * idx.size
            count += idx.size
        history.append(total / count)
    return opt.arrays, history


def _fit_contrastive(arrays, X, y, cfg, rng_order, rng_aug, rng_init):
    width = arrays[-4].shape[0]
    # projection used only during contrastive training
    proj_W = rng_init.standard_normal((width, width)) * np.sqrt(1.0 / width)
    proj_b = np.zeros(width)
    enc = arrays[:-2]
    opt = _Sgd(enc + [proj_W, proj_b], cfg.momentum, cfg.weight_decay)
    n_enc = len(enc)
    history = []
    for epoch in range(cfg.epochs):
        lr = _lr(cfg.learning_rate, epoch, cfg.epochs, cfg.cosine)
        total, count = 0.0, 0
        for idx in _batches(rng_order, X.shape[0], cfg.batch_size):
            B = idx.size
            views = np.empty((2 * B, X.shape[1]))
            views[0::2] = _augment(rng_aug, X[idx], cfg.augment_noise_sigma, cfg.augment_drop_prob)
            views[1::2] = _augment(rng_aug, X[idx], cfg.augment_noise_sigma, cfg.augment_drop_prob)
            a = opt.arrays
            net = a[:n_enc] + [None, None]
            acts = encode(net, views)
            H = acts[-1] @ a[n_enc].T + a[n_enc + 1]
            norm = np.sqrt(np.sum(H * H, axis=1, keepdims=True) + 1e-12)
            E = H / norm
            if cfg.criterion == "SIMCLR":
                loss, dE = nt_xent_grad(E, cfg.temperature)
            else:
                loss, dE = supcon_grad(E, y[idx], cfg.temperature)
            _check(loss, epoch + 1)
            dH = (dE - E * np.sum(E * dE, axis=1, keepdims=True)) / norm
            # a view whose features are all zero has no direction; 1/norm would explode
            dH[norm[:, 0] <= _MIN_NORM] = 0.0
            grad_feat = dH @ a[n_enc]
            grads = encode_backward(net, acts, grad_feat) + [dH.T @ acts[-1], dH.sum(axis=0)]
            opt.step(grads, lr)
            total += loss * B
            count += B
        history.append(total / count)
    return opt.arrays[:n_enc], history


def fit_head(features, y, K, head_arrays, cfg, rng_order):
    """Cross-entropy SGD on a linear head over frozen features."""
    opt = _Sgd(head_arrays, cfg.momentum, cfg.weight_decay)
    history = []
    for epoch in range(cfg.head_epochs):
        lr = _lr(cfg.head_learning_rate, epoch, cfg.head_epochs, cfg.cosine)
        total, count = 0.0, 0
        for idx in _batches(rng_order, features.shape[0], cfg.batch_size):
            W, b = opt.arrays
            loss, dlogits = cross_entropy_grad(features[idx] @ W.T + b, y[idx])
            _check(loss, epoch + 1)
            opt.step([dlogits.T @ features[idx], dlogits.sum(axis=0)], lr)
            total += loss * idx.size
            count += idx.size
        history.append(total / count)
    return opt.arrays, history


def train_mlp(data, config=TrainConfig()):
    """Train an encoder and head on the dataset's training split.

    ``SUPCE`` trains end to end with cross-entropy. ``SIMCLR`` and ``SUPCON``
    train the encoder (plus a discarded projection) on two noisy, dropped-out
    views per sample, then fit the head on frozen clean features. The
    returned params carry per-epoch mean losses in ``history``.
    """
    X, labels = data.train()
    y = labels.labels
    K = labels.K
    seed = int(config.seed)
    # criterion enters the init stream so equal seeds do not share a start point
    crit = CRITERIA.index(config.criterion)
    rng_init = np.random.default_rng([seed, _INIT, crit])
    rng_order = np.random.default_rng([seed, _ORDER, crit])
    init = init_params(X.shape[1], K, rng_init, config.widths)
    arrays = init.arrays()
    if config.criterion == "SUPCE":
        trained, history = _fit_supce(arrays, X, y, config, rng_order)
        return MlpParams.from_arrays(trained, history=tuple(history))
    rng_aug = np.random.default_rng([seed, _AUG, crit])
    enc, history = _fit_contrastive(arrays, X, y, config, rng_order, rng_aug, rng_init)
    feats = encode(enc + [None, None], X)[-1]
    head, head_hist = fit_head(feats, y, K, arrays[-2:], config,
                               np.random.default_rng([seed, _HEAD, crit]))
    return MlpParams.from_arrays(enc + head, history=tuple(history))


def config_for(criterion, seed, **overrides):
    return replace(TrainConfig(), criterion=criterion, seed=seed, **overrides)
