"""Rectified epsilon-skew-normal activations and ensemble movement formulas.

``ESN(mu, sigma, eps)`` has density ``phi((x - mu) / ((1 + eps) sigma)) / sigma``
below ``mu`` and ``phi((x - mu) / ((1 - eps) sigma)) / sigma`` above it;
``eps < 0`` puts more mass on the right. Feature averaging over ``M``
members is modelled by shrinking the scale to ``sigma / sqrt(M)`` with
location and skew unchanged, then rectifying.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .numerics import normal_cdf as Phi
from .numerics import normal_pdf as phi

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EsnParams:
    mu: float
    sigma: float
    eps_skew: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ArgumentError(f"sigma must be positive, got {self.sigma}")
        if not -1.0 < self.eps_skew <= 0.0:
            raise ArgumentError(f"eps_skew must lie in (-1, 0], got {self.eps_skew}")


def esn_pdf(x, p):
    s = (1.0 + p.eps_skew) if x < p.mu else (1.0 - p.eps_skew)
    return phi((x - p.mu) / (s * p.sigma)) / p.sigma


def esn_sample(p, size, rng):
    """Draw from ``ESN(mu, sigma, eps)``: left half-normal w.p. ``(1 + eps) / 2``."""
    a, c = 1.0 + p.eps_skew, 1.0 - p.eps_skew
    mag = np.abs(rng.standard_normal(size))
    left = rng.random(size) < a / 2.0
    return p.mu + p.sigma * np.where(left, -a * mag, c * mag)


def rectified_esn_mean(p):
    """``E[max(0, X)]`` for ``X ~ ESN(mu, sigma, eps)``.

    For ``mu >= 0`` this is
    ``mu [1 - a Phi(-mu / (a sigma))] + a^2 phi(mu / (a sigma)) sigma - 4 eps sigma / sqrt(2 pi)``
    with ``a = 1 + eps``. For ``mu < 0`` only the right branch reaches the
    positive axis and ``c = 1 - eps`` replaces ``a``.
    """
    mu, sigma, eps = p.mu, p.sigma, p.eps_skew
    if mu >= 0:
        a = 1.0 + eps
        z = -mu / (a * sigma)
        return mu * (1.0 - a * Phi(z)) + a * a * phi(z) * sigma - 4.0 * eps * sigma * _INV_SQRT_2PI
    c = 1.0 - eps
    z = mu / (c * sigma)
    return c * (mu * Phi(z) + c * sigma * phi(z))


def id_movement(mu, sigma_in, M):
    """Expected rise of a rectified normal activation under M-member averaging."""
    if M < 1:
        raise ArgumentError(f"M must be >= 1, got {M}")
    if not sigma_in > 0:
        raise ArgumentError("sigma_in must be positive")
    r = math.sqrt(M)
    b = mu / sigma_in
    return mu * (Phi(b * r) - Phi(b)) + sigma_in * (phi(b * r) / r - phi(-b))


def ood_movement(mu, sigma_out, eps, M):
    """Expected rise of a rectified ESN activation under M-member averaging."""
    if M < 1:
        raise ArgumentError(f"M must be >= 1, got {M}")
    if not -1.0 < eps <= 0.0:
        raise ArgumentError(f"eps must lie in (-1, 0], got {eps}")
    if not sigma_out > 0:
        raise ArgumentError("sigma_out must be positive")
    r = math.sqrt(M)
    a = 1.0 + eps
    x = mu / (a * sigma_out)
    skew = 4.0 * eps * sigma_out * _INV_SQRT_2PI * (1.0 - 1.0 / r)
    return (skew
            + a * mu * (Phi(x * r) - Phi(x))
            + a * a * sigma_out * (phi(x * r) / r - phi(x)))


def gap_terms(mu, sigma, eps, M):
    """The location part and the scale part of ``ood_movement - id_movement``."""
    a = 1.0 + eps
    b = mu / sigma
    c = math.sqrt(M)
    loc = mu * (a * Phi(b * c / a) - a * Phi(b / a) - Phi(b * c) + Phi(b))
    scale = sigma * (a * a / c * phi(b * c / a) - a * a * phi(b / a) - phi(b * c) / c + phi(b)
                     + 4.0 * eps * _INV_SQRT_2PI * (1.0 - 1.0 / c))
    return loc, scale


def movement_gap(mu, sigma, eps, M):
    """``E_out[zbar - z] - E_in[zbar - z]`` at equal spread; negative when ID moves more."""
    if M < 1:
        raise ArgumentError(f"M must be >= 1, got {M}")
    if not -1.0 < eps <= 0.0:
        raise ArgumentError(f"eps must lie in (-1, 0], got {eps}")
    if not sigma > 0:
        raise ArgumentError("sigma must be positive")
    if not mu > 0:
        raise ArgumentError(f"the movement gap is defined for mu > 0, got {mu}")
    loc, scale = gap_terms(mu, sigma, eps, M)
    return loc + scale


# ------------------------------------------------------------ sampling oracles

def mc_rectified_mean(p, draws, rng, chunk=2_000_000):
    """Monte-Carlo ``E[max(0, X)]`` with its standard error."""
    total, total_sq, n = 0.0, 0.0, 0
    while n < draws:
        m = min(chunk, draws - n)
        z = np.maximum(0.0, esn_sample(p, m, rng))
        total += float(np.sum(z))
        total_sq += float(np.dot(z, z))
        n += m
    mean = total / n
    var = (total_sq - n * mean * mean) / (n - 1)
    return mean, math.sqrt(max(var, 0.0) / n)


def mc_movement(mu, sigma, eps, M, draws, rng, chunk=2_000_000):
    """Monte-Carlo ``E[relu(xbar) - relu(x)]`` with its standard error.

    ``x ~ ESN(mu, sigma, eps)`` is the single member and ``xbar`` the
    averaged pre-activation. For ``eps == 0`` ``xbar`` is literally the
    mean of ``M`` normal draws, the first of which serves as ``x``.
    Otherwise ``xbar`` is drawn independently from
    ``ESN(mu, sigma / sqrt(M), eps)``.
    """
    single = EsnParams(mu, sigma, eps)
    chunk = max(1, min(chunk, 16_000_000 // M))
    total, total_sq, n = 0.0, 0.0, 0
    while n < draws:
        m = min(chunk, draws - n)
        if eps == 0.0:
            # the single member is the first of the M averaged draws
            x = mu + sigma * rng.standard_normal((M, m))
            z = np.maximum(0.0, x[0])
            xbar = x.mean(axis=0)
        else:
            z = np.maximum(0.0, esn_sample(single, m, rng))
            xbar = esn_sample(EsnParams(mu, sigma / math.sqrt(M), eps), m, rng)
        d = np.maximum(0.0, xbar) - z
        total += float(np.sum(d))
        total_sq += float(np.dot(d, d))
        n += m
    mean = total / n
    var = (total_sq - n * mean * mean) / (n - 1)
    return mean, math.sqrt(max(var, 0.0) / n)


def angle_concentration(dim, n_pairs, seed, quantile=0.95):
    """Angle statistics between independent isotropic random vectors.

    Returns ``mean_angle``, ``max_abs_dev_from_right_angle`` and
    ``quantile_abs_dev`` (the ``quantile`` of ``|theta - pi/2|``).
    """
    if dim < 2:
        raise ArgumentError(f"dim must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_pairs, dim))
    v = rng.standard_normal((n_pairs, dim))
    cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    dev = np.abs(theta - math.pi / 2)
    return {"mean_angle": float(theta.mean()), "max_abs_dev_from_right_angle": float(dev.max()),
            "quantile_abs_dev": float(np.quantile(dev, quantile))}


def verification_grid(mus=(0.5, 1.0, 2.0), sigmas=(0.5, 1.0), epss=(-0.1, -0.5, -0.9),
                      Ms=(2, 4, 16), draws=0, seed=0):
    """Evaluate the movement gap over a grid, optionally with a sampling cross-check.

    Each row is a dict with keys ``mu, sigma, eps, M, gap, mc_gap, mc_se``;
    the Monte-Carlo fields are NaN when ``draws == 0``.
    """
    rows = []
    rng = np.random.default_rng(seed)
    for mu in mus:
        for sigma in sigmas:
            for eps in epss:
                for M in Ms:
                    gap = movement_gap(mu, sigma, eps, M)
                    mc_gap = mc_se = float("nan")
                    if draws:
                        o, so = mc_movement(mu, sigma, eps, M, draws, rng)
                        i, si = mc_movement(mu, sigma, 0.0, M, draws, rng)
                        mc_gap, mc_se = o - i, math.hypot(so, si)
                    rows.append({"mu": mu, "sigma": sigma, "eps": eps, "M": M, "gap": gap,
                                 "mc_gap": mc_gap, "mc_se": mc_se})
    return rows
