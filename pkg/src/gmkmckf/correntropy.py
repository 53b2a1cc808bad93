"""Generalized Gaussian kernel, multi-kernel correntropy and the generalized loss.

All functions broadcast over numpy arrays. An infinite bandwidth (``math.inf``,
re-exported as :data:`UNBOUNDED`) selects the analytic limit branch, so
``beta = UNBOUNDED`` is exact rather than "very large".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNBOUNDED = math.inf

#: Lower clamp on ``|e|`` for weights and influence functions with alpha < 2.
ERROR_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Shape ``alpha`` and one bandwidth per error channel.

    Args:
        alpha: shape parameter, > 0.
        betas: per-channel bandwidths, each > 0 or :data:`UNBOUNDED`.
    """

    alpha: float
    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in np.atleast_1d(self.betas))
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha", float(self.alpha))
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a finite positive number, got {self.alpha}")
        if not betas:
            raise ValueError("betas must contain at least one channel")
        for b in betas:
            if not b > 0:
                raise ValueError(f"bandwidths must be positive or UNBOUNDED, got {b}")

    @classmethod
    def uniform(cls, alpha: float, beta: float, channels: int) -> "KernelConfig":
        return cls(alpha, (beta,) * channels)

    @property
    def channels(self) -> int:
        return len(self.betas)

    @property
    def beta_array(self) -> np.ndarray:
        return np.array(self.betas)

    def check(self, e: np.ndarray) -> None:
        if e.shape[-1] != self.channels:
            raise ValueError(
                f"error has {e.shape[-1]} channels but kernel has {self.channels} bandwidths"
            )


_LOG_BIG = 100 * math.log(10)


def _scaled_power(e, beta, alpha):
    """``|e/beta|**alpha`` with infinite beta mapped to 0 and no overflow."""
    e = np.abs(np.asarray(e, dtype=float))
    beta = np.asarray(beta, dtype=float)
    finite = np.isfinite(beta)
    with np.errstate(over="ignore"):
        ratio = np.divide(e, np.where(finite, beta, 1.0))
    ratio = np.where(finite, ratio, 0.0)
    # threshold 1e100 ** (1 / alpha), capped so it stays finite for small alpha
    big = ratio > math.exp(min(_LOG_BIG / alpha, 709.0))
    with np.errstate(divide="ignore", over="ignore"):
        direct = np.power(np.where(big, 1.0, ratio), alpha)
        logged = np.exp(np.minimum(alpha * np.log(np.where(big, ratio, 1.0)), 709.0))
    return np.where(big, logged, direct)


def ggd_kernel(e, alpha: float, beta: float):
    """Generalized Gaussian kernel ``exp(-|e/beta|**alpha)``.

    Returns 1 wherever ``beta`` is unbounded.
    """
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("kernel argument must be finite")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if np.any(np.asarray(beta) <= 0):
        raise ValueError("beta must be positive")
    out = np.exp(-_scaled_power(e, beta, alpha))
    return float(out) if out.ndim == 0 else out


def _channel_loss(e, alpha, betas):
    """Per-channel ``beta**alpha * (1 - G(e))``, or ``|e|**alpha`` when unbounded."""
    e = np.asarray(e, dtype=float)
    finite = np.isfinite(betas)
    z = _scaled_power(e, betas, alpha)
    safe_b = np.where(finite, betas, 1.0)
    bounded = np.power(safe_b, alpha) * -np.expm1(-z)
    return np.where(finite, bounded, np.power(np.abs(e), alpha))


def gl_loss(e, cfg: KernelConfig) -> float:
    """Generalized loss of a single error vector."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.ndim != 1:
        raise ValueError("gl_loss expects a single error vector")
    cfg.check(e)
    return float(np.sum(_channel_loss(e, cfg.alpha, cfg.beta_array)))


def _errors(x, y, cfg: KernelConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"sample shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 1:
        x = x[:, None] if cfg.channels == 1 else x[None, :]
        y = y.reshape(x.shape)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("expected a non-empty (N, l) array of samples")
    e = x - y
    cfg.check(e)
    return e


def gl_loss_samples(x, y, cfg: KernelConfig) -> float:
    """Sample estimate of the generalized loss between paired samples.

    Args:
        x, y: arrays of shape ``(N, l)`` holding N paired samples of an
            l-channel random vector. A 1-d array is read as N scalar samples
            when the kernel has one channel and as a single sample otherwise.
        cfg: kernel with ``l`` bandwidths.
    """
    e = _errors(x, y, cfg)
    return float(np.sum(np.mean(_channel_loss(e, cfg.alpha, cfg.beta_array), axis=0)))


def gcim(x, y, cfg: KernelConfig) -> float:
    """Correntropy induced metric: square root of :func:`gl_loss_samples`.

    The triangle inequality is only guaranteed for ``0 < alpha <= 2``.
    """
    return math.sqrt(gl_loss_samples(x, y, cfg))


def _clamped_abs(e, alpha_like: float, floor: float | None, what: str):
    a = np.abs(e)
    if alpha_like <= 1 and np.any(a == 0):
        if floor is None:
            raise ValueError(f"{what} is undefined at e = 0 for exponent <= 1; pass a floor")
    if floor is not None:
        a = np.maximum(a, floor)
    return a


def influence_gl(e, cfg: KernelConfig, floor: float | None = None) -> np.ndarray:
    """Gradient of :func:`gl_loss` with respect to the error vector.

    Component i is ``alpha * exp(-|e_i/beta_i|**alpha) * |e_i|**(alpha-1) * sign(e_i)``.
    For ``alpha <= 1`` the gradient has a pole at zero; pass ``floor`` to clamp
    ``|e_i|`` from below instead of raising.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    cfg.check(e)
    a = _clamped_abs(e, cfg.alpha, floor, "influence_gl")
    with np.errstate(divide="ignore"):
        mag = cfg.alpha * np.exp(-_scaled_power(a, cfg.beta_array, cfg.alpha)) * a ** (cfg.alpha - 1)
    return np.where(e == 0, 0.0, np.sign(e) * mag)


def influence_lmp(e, p: float, floor: float | None = None) -> np.ndarray:
    """Gradient of the least-mean-p-power loss ``sum |e_i|**p``."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if not p > 0:
        raise ValueError("p must be positive")
    a = _clamped_abs(e, p, floor, "influence_lmp")
    with np.errstate(divide="ignore"):
        mag = p * a ** (p - 1)
    return np.where(e == 0, 0.0, np.sign(e) * mag)


def lmp_loss(e, p: float) -> float:
    # np.power rather than ** so the unbounded generalized loss agrees bit for bit
    return float(np.sum(np.power(np.abs(np.asarray(e, dtype=float)), p)))


def fixed_point_weight(e, alpha: float, beta, floor: float = ERROR_FLOOR):
    """Reweighting factor ``|e|**(alpha-2) * exp(-|e/beta|**alpha)``.

    ``|e|`` is clamped below at ``floor`` so the weight stays finite. With
    ``alpha = 2`` and unbounded ``beta`` the weight is exactly 1.
    """
    a = np.maximum(np.abs(np.asarray(e, dtype=float)), floor)
    w = np.exp(-_scaled_power(a, beta, alpha))
    if alpha != 2:
        w = w * a ** (alpha - 2)
    return float(w) if np.ndim(w) == 0 else w


def convex_radius(alpha: float, beta: float) -> float:
    """Half-width of the region where the 1-d loss is convex (alpha > 1).

    This is also where the influence-function magnitude peaks.
    """
    if alpha <= 1:
        raise ValueError("the loss has no convex region around zero for alpha <= 1")
    return ((alpha - 1) / alpha) ** (1 / alpha) * beta

