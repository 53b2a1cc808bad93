"""Comparison observers: KF-DOB, extended state observer, MCKF and a bootstrap particle filter.

All observers share the interface used by the closed-loop harness:
``update(y)`` incorporates the measurement at sample k, ``estimate`` is then
the state estimate used by the controller, and ``predict(u)`` moves to k + 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .correntropy import KernelConfig
from .filters import (FilterState, GmkmckfConfig, GmkmckfObserver, KalmanObserver, ModelLike,
                      as_linear, cholesky_jitter, kf_predict, kf_update)
from .noise import Gaussian, NoiseSpec


def kfdob_step(state: FilterState, model: ModelLike, y, u=None) -> FilterState:
    """One KF-DOB cycle: update with ``y`` then predict with ``u``.

    KF-DOB is the plain Kalman filter on the disturbance-augmented model.
    """
    post = kf_update(state, model, y)
    return post if u is None else kf_predict(post, model, u)


KfDobObserver = KalmanObserver


def mckf_config(sigma: float, channels: int, m_iter: int = 5, eps_stop: float = 1e-6) -> GmkmckfConfig:
    """Single-kernel MCKF: alpha = 2 with every bandwidth ``sqrt(2) * sigma``."""
    return GmkmckfConfig(KernelConfig.uniform(2.0, math.sqrt(2.0) * sigma, channels),
                         m_iter=m_iter, eps_stop=eps_stop)


def mkmckf_config(sigmas: Sequence[float], m_iter: int = 5, eps_stop: float = 1e-6) -> GmkmckfConfig:
    """Multi-kernel MCKF: alpha = 2 with per-channel bandwidths ``sqrt(2) * sigma_i``."""
    return GmkmckfConfig(KernelConfig(2.0, tuple(math.sqrt(2.0) * s for s in sigmas)),
                         m_iter=m_iter, eps_stop=eps_stop)


class MckfObserver(GmkmckfObserver):
    def __init__(self, model: ModelLike, x0, P0, sigma: float, m_iter: int = 5,
                 eps_stop: float = 1e-6):
        model = as_linear(model)
        super().__init__(model, x0, P0, mckf_config(sigma, model.n + model.m, m_iter, eps_stop))
        self.sigma = sigma


# ------------------------------------------------------------------ ESO


def observer_gain(A: np.ndarray, C: np.ndarray, poles: Sequence[float]) -> np.ndarray:
    """Observer gain placing ``eig(A - L C)`` at ``poles`` (single output, Ackermann).

    Repeated poles are allowed, which rules out ``scipy.signal.place_poles``.
    """
    n = A.shape[0]
    if C.shape[0] != 1:
        raise ValueError("Ackermann placement needs a single measurement")
    coeffs = np.real(np.poly(poles))
    phi = sum(c * np.linalg.matrix_power(A, n - i) for i, c in enumerate(coeffs))
    O = np.vstack([C @ np.linalg.matrix_power(A, i) for i in range(n)])
    if np.linalg.matrix_rank(O) < n:
        raise ValueError("(A, C) is not observable")
    e_n = np.zeros((n, 1))
    e_n[-1] = 1.0
    return phi @ np.linalg.solve(O, e_n)


@dataclass
class EsoConfig:
    """Observer bandwidth ``omega0`` (rad/s), or an explicit gain vector."""

    omega0: float = 30.0
    gain: Optional[np.ndarray] = None

    def gain_for(self, model: ModelLike, T: float) -> np.ndarray:
        model = as_linear(model)
        if self.gain is not None:
            L = np.asarray(self.gain, dtype=float).reshape(model.n, model.m)
        else:
            pole = math.exp(-self.omega0 * T)
            L = observer_gain(model.A, model.C, [pole] * model.n)
        rho = np.max(np.abs(np.linalg.eigvals(model.A - L @ model.C)))
        if not rho < 1:
            raise ValueError(f"observer matrix is unstable (spectral radius {rho:.4g})")
        return L


def eso_step(x_hat, model: ModelLike, y, u, L) -> np.ndarray:
    """``x_{k+1} = A x_k + F u_k + L (y_k - C x_k)``."""
    model = as_linear(model)
    x_hat = np.asarray(x_hat, dtype=float)
    innov = np.atleast_1d(y) - model.C @ x_hat
    nxt = model.A @ x_hat + L @ innov
    if u is not None and model.p:
        nxt = nxt + model.F @ np.atleast_1d(u)
    return nxt


class EsoObserver:
    """Luenberger-type extended state observer on the augmented model.

    The estimate at sample k is built from measurements up to k - 1; the
    measurement ``y_k`` only enters the prediction for k + 1.
    """

    def __init__(self, model: ModelLike, x0, T: float, cfg: EsoConfig = None):
        self.model = as_linear(model)
        self.cfg = cfg or EsoConfig()
        self.L = self.cfg.gain_for(self.model, T)
        self.x = np.asarray(x0, dtype=float).copy()
        self._innov = np.zeros(self.model.m)
        self.iterations = 1
        self.converged = True

    @property
    def estimate(self) -> np.ndarray:
        return self.x

    def update(self, y) -> None:
        self._innov = np.atleast_1d(y) - self.model.C @ self.x

    def predict(self, u=None) -> None:
        self.x = self.model.A @ self.x + self.L @ self._innov
        if u is not None and self.model.p:
            self.x = self.x + self.model.F @ np.atleast_1d(u)
        self._innov = np.zeros(self.model.m)


# ------------------------------------------------------------------ particle filter


def systematic_resample(weights, n: Optional[int] = None, offset: Optional[float] = None,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Indices drawn by systematic resampling.

    One offset ``u0`` in [0, 1) is shared by ``n`` equal strata; stratum j
    selects the particle whose cumulative weight first exceeds ``(j + u0) / n``.
    """
    w = np.asarray(weights, dtype=float)
    n = w.size if n is None else int(n)
    if offset is None:
        offset = (rng if rng is not None else np.random.default_rng()).random()
    cum = np.cumsum(w)
    cum /= cum[-1]
    positions = (np.arange(n) + offset) / n
    return np.minimum(np.searchsorted(cum, positions, side="right"), w.size - 1)


@dataclass
class PfConfig:
    """Bootstrap PF settings.

    Args:
        particles: particle count N.
        process: one noise spec per state channel, used in the proposal.
        measurement: one noise spec per measurement channel, used as likelihood.
    """

    particles: int = 1000
    process: Sequence[NoiseSpec] = field(default_factory=tuple)
    measurement: Sequence[NoiseSpec] = field(default_factory=tuple)
    resampling: str = "systematic"

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if self.resampling != "systematic":
            raise ValueError("only systematic resampling is implemented")


def _pf_weigh(particles, weights, model, y, specs):
    """Normalized posterior weights; ``None`` when every weight vanished.

    Weights are formed in the log domain so that a sharp likelihood far from
    every particle still ranks them instead of underflowing to zero.
    """
    resid = np.atleast_1d(np.asarray(y, dtype=float)) - particles @ model.C.T
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights, dtype=float))
    for j, spec in enumerate(specs):
        logw = logw + spec.logpdf(resid[:, j])
    top = np.max(logw)
    if not np.isfinite(top):
        return None
    w = np.exp(logw - top)
    return w / w.sum()


def _pf_propagate(particles, model, u, specs, rng):
    p = particles @ model.A.T
    if u is not None and model.p:
        p = p + model.F @ np.atleast_1d(u)
    noise = np.column_stack([spec.sample(rng, len(p)) for spec in specs])
    return p + noise


class ParticleFilterObserver:
    """Bootstrap particle filter with systematic resampling at every step."""

    def __init__(self, model: ModelLike, x0, P0, cfg: PfConfig, rng: np.random.Generator):
        self.model = as_linear(model)
        self.cfg = cfg
        self.rng = rng
        n, m = self.model.n, self.model.m
        if len(cfg.process) != n or len(cfg.measurement) != m:
            raise ValueError("PF needs one process spec per state and one measurement spec per output")
        N = cfg.particles
        chol = cholesky_jitter(np.atleast_2d(np.asarray(P0, dtype=float)))
        self.particles = np.asarray(x0, dtype=float) + rng.standard_normal((N, n)) @ chol.T
        self.weights = np.full(N, 1.0 / N)
        self.x = self.particles.mean(axis=0)
        self.degenerate_resets = 0
        self.iterations = 1
        self.converged = True

    @property
    def estimate(self) -> np.ndarray:
        return self.x

    def update(self, y) -> None:
        w = _pf_weigh(self.particles, self.weights, self.model, y, self.cfg.measurement)
        if w is None:
            self.degenerate_resets += 1
            warnings.warn("all particle weights vanished; resetting to uniform", RuntimeWarning)
            w = np.full(len(self.particles), 1.0 / len(self.particles))
        self.x = w @ self.particles
        idx = systematic_resample(w, rng=self.rng)
        self.particles = self.particles[idx]
        self.weights = np.full(len(idx), 1.0 / len(idx))

    def predict(self, u=None) -> None:
        self.particles = _pf_propagate(self.particles, self.model, u, self.cfg.process, self.rng)


def pf_step(particles, weights, model: ModelLike, y, u, cfg: PfConfig, rng: np.random.Generator):
    """Functional PF cycle: weight by ``y``, estimate, resample, then propagate with ``u``.

    Returns:
        ``(particles, weights, estimate)`` where ``estimate`` is the weighted
        mean before resampling. Vanishing weights fall back to uniform.
    """
    model = as_linear(model)
    particles = np.asarray(particles, dtype=float)
    w = _pf_weigh(particles, weights, model, y, cfg.measurement)
    if w is None:
        warnings.warn("all particle weights vanished; resetting to uniform", RuntimeWarning)
        w = np.full(len(particles), 1.0 / len(particles))
    est = w @ particles
    idx = systematic_resample(w, rng=rng)
    nxt = _pf_propagate(particles[idx], model, u, cfg.process, rng)
    return nxt, np.full(len(idx), 1.0 / len(idx)), est


def gaussian_specs(variances: Sequence[float]):
    return tuple(Gaussian(0.0, v) for v in variances)
