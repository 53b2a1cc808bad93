"""Sufficient bandwidth conditions for convergence of the alpha = 2 fixed point.

For the regression ``x = f(x) = (sum w_i' G(e_i) w_i)^-1 sum w_i' G(e_i) t_i`` with
Gaussian weights ``G(e) = exp(-e^2 / beta^2)``, a bandwidth of at least
``beta*`` keeps the l1 ball of radius ``gamma`` invariant, and at least
``max(beta*, beta+)`` makes ``f`` a contraction on it with rate ``eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .filters import RegressionForm

NO_SOLUTION = None


def min_eigen_sym(M) -> float:
    """Smallest eigenvalue of a symmetric matrix (LAPACK ``syevd`` via ``eigvalsh``)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.abs(M).max()))
    if not np.allclose(M, M.T, atol=1e-10 * scale, rtol=0):
        raise ValueError("matrix must be symmetric")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


@dataclass
class ConvergenceQuery:
    """Regression rows ``w_i`` (as the rows of ``W``), targets ``t_i`` and ball parameters.

    Args:
        W: (l, n) matrix whose rows are the ``w_i``.
        t: (l,) targets.
        gamma: radius of the l1 ball; ``None`` picks twice the minimal radius.
        eta: contraction rate target in (0, 1).
        alpha: shape parameter of the kernel being certified.
    """

    W: np.ndarray
    t: np.ndarray
    gamma: Optional[float] = None
    eta: float = 0.5
    alpha: float = 2.0

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        if self.W.shape[0] != self.t.size:
            raise ValueError("W must have one row per target")
        # constants reused by every phi / psi evaluation during root finding
        self._row_l1 = np.abs(self.W).sum(axis=1)
        self._numer = math.sqrt(self.n) * float(np.sum(self._row_l1 * np.abs(self.t)))
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.gamma is None:
            self.gamma = 2.0 * xi_bound(self)
        elif not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @classmethod
    def from_regression(cls, form: RegressionForm, gamma=None, eta=0.5, alpha=2.0):
        return cls(form.W, form.T, gamma, eta, alpha)

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def row_l1(self) -> np.ndarray:
        return self._row_l1


def _lam_min(G: np.ndarray) -> float:
    # G is symmetric by construction, so the checks in min_eigen_sym are skipped
    if G.shape[0] == 1:
        return float(G[0, 0])
    return float(np.linalg.eigvalsh(G)[0])


def _numerator(q: ConvergenceQuery) -> float:
    return q._numer


def _weighted_min_eig(q: ConvergenceQuery, beta: float) -> float:
    # worst-case residual bound on the ball: |e_i| <= gamma ||w_i||_1 + |t_i|
    z = q.gamma * q.row_l1 + np.abs(q.t)
    g = np.exp(-(z / beta) ** 2)
    return _lam_min((q.W.T * g) @ q.W)


def xi_bound(q: ConvergenceQuery) -> float:
    """Minimal admissible ball radius ``sqrt(n) sum ||w_i||_1 |t_i| / lambda_min(W'W)``."""
    lam = min_eigen_sym(q.W.T @ q.W)
    if not lam > 0:
        raise ValueError("sum of w_i' w_i is rank deficient")
    return _numerator(q) / lam


def phi(beta: float, q: ConvergenceQuery) -> float:
    """Bound on ``||f(x)||_1`` over the ball for a uniform bandwidth ``beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    lam = _weighted_min_eig(q, beta)
    if not lam > 0:
        return math.inf
    return _numerator(q) / lam


def psi(beta: float, q: ConvergenceQuery) -> float:
    """Bound on the Jacobian 1-norm of ``f`` over the ball for a uniform bandwidth ``beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    lam = _weighted_min_eig(q, beta)
    if not lam > 0:
        return math.inf
    w1 = q.row_l1
    at = np.abs(q.t)
    # ||w_i' w_i||_1 is the max column sum of the outer product = ||w_i||_inf * ||w_i||_1
    outer1 = np.abs(q.W).max(axis=1) * w1
    num = 2 * math.sqrt(q.n) * float(np.sum((at + q.gamma * w1) * w1 * (q.gamma * outer1 + w1 * at)))
    return num / (beta ** 2 * lam)


def _solve_decreasing(fun, target: float, rtol: float = 1e-10, max_doublings: int = 200):
    """Root of a decreasing function ``fun(beta) = target`` by bracketing and bisection."""
    lo = hi = 1.0
    for _ in range(max_doublings):
        if fun(lo) > target:
            break
        lo *= 0.5
    else:
        return NO_SOLUTION
    for _ in range(max_doublings):
        if fun(hi) < target:
            break
        hi *= 2.0
    else:
        return NO_SOLUTION
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if fun(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_star(q: ConvergenceQuery):
    """Bandwidth with ``phi(beta) = gamma``, or ``None`` when ``gamma <= xi``."""
    if q.gamma <= xi_bound(q):
        return NO_SOLUTION
    return _solve_decreasing(lambda b: phi(b, q), q.gamma)


def beta_plus(q: ConvergenceQuery):
    """Bandwidth with ``psi(beta) = eta``, or ``None`` when ``gamma <= xi``."""
    if q.gamma <= xi_bound(q):
        return NO_SOLUTION
    return _solve_decreasing(lambda b: psi(b, q), q.eta)


@dataclass
class Certificate:
    status: str
    gamma: float
    eta: float
    xi: Optional[float] = None
    beta_star: Optional[float] = None
    beta_plus: Optional[float] = None
    recommended_min_beta: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def certify(q: ConvergenceQuery) -> Certificate:
    """Bundle ``xi``, ``beta*``, ``beta+`` and the recommended minimum bandwidth.

    Status is ``"certified"``, ``"no solution"`` when ``gamma <= xi``, or
    ``"uncertified"`` for kernels with ``alpha != 2``, where no bound is known.
    """
    if q.alpha != 2:
        return Certificate("uncertified", q.gamma, q.eta)
    xi = xi_bound(q)
    bs, bp = beta_star(q), beta_plus(q)
    if bs is NO_SOLUTION or bp is NO_SOLUTION:
        return Certificate("no solution", q.gamma, q.eta, xi, bs, bp)
    return Certificate("certified", q.gamma, q.eta, xi, bs, bp, max(bs, bp))
