"""Kalman recursion and the generalized multi-kernel maximum correntropy update.

The robust update rewrites the measurement step as a whitened regression
``T = W x + noise`` and solves the generalized-loss fixed point by
re-weighting the prior and measurement covariances. KF, MCKF and MKMCKF are
special kernel settings of the same update (alpha = 2 with unbounded,
uniform or per-channel bandwidths).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import lapack

from .correntropy import ERROR_FLOOR, KernelConfig, gl_loss

SYMMETRY_TOL = 1e-10
# Smallest weight allowed on a channel; keeps the inverted weights finite.
WEIGHT_FLOOR = 1e-200


def _mat(a, rows=None, cols=None, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got shape {a.shape}")
    return a


def _symmetrize(P):
    return 0.5 * (P + P.T)


@dataclass
class LinearModel:
    """Discrete LTI plant ``x+ = A x + F u + w``, ``y = C x + v``.

    Args:
        A: (n, n) transition matrix.
        F: (n, p) input map; ``None`` for a plant without input.
        C: (m, n) observation matrix.
        Q: (n, n) process covariance, symmetric PSD.
        R: (m, m) measurement covariance, symmetric PD.
    """

    A: np.ndarray
    F: Optional[np.ndarray]
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A = _mat(self.A, name="A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.F is None:
            self.F = np.zeros((n, 0))
        else:
            F = np.asarray(self.F, dtype=float)
            self.F = _mat(F.reshape(n, 1) if F.ndim == 1 else F, rows=n, name="F")
        self.C = _mat(self.C, cols=n, name="C")
        m = self.C.shape[0]
        self.Q = _mat(self.Q, rows=n, cols=n, name="Q")
        self.R = _mat(self.R, rows=m, cols=m, name="R")
        if not np.allclose(self.Q, self.Q.T, atol=SYMMETRY_TOL):
            raise ValueError("Q must be symmetric")
        if not np.allclose(self.R, self.R.T, atol=SYMMETRY_TOL):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12 * max(1.0, np.abs(self.Q).max()):
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.F.shape[1]


@dataclass
class AugmentedModel:
    """Plant with the disturbance appended as a random-walk state.

    The augmented state is ``[d; x]`` with ``d`` first, giving
    ``A_aug = [[I, 0], [Gamma, A]]`` and ``C_aug = [0, C]``.
    """

    base: LinearModel
    Gamma: np.ndarray
    Q_d: np.ndarray

    def __post_init__(self):
        self.Gamma = _mat(self.Gamma, rows=self.base.n, name="Gamma")
        q = self.Gamma.shape[1]
        self.Q_d = _mat(self.Q_d, rows=q, cols=q, name="Q_d")

    @property
    def q(self) -> int:
        return self.Gamma.shape[1]

    def linear(self) -> LinearModel:
        b, q, n = self.base, self.q, self.base.n
        A = np.block([[np.eye(q), np.zeros((q, n))], [self.Gamma, b.A]])
        F = np.vstack([np.zeros((q, b.p)), b.F])
        C = np.hstack([np.zeros((b.m, q)), b.C])
        Q = np.block([[self.Q_d, np.zeros((q, n))], [np.zeros((n, q)), b.Q]])
        return LinearModel(A, F, C, Q, b.R.copy())


ModelLike = Union[LinearModel, AugmentedModel]


def as_linear(model: ModelLike) -> LinearModel:
    return model.linear() if isinstance(model, AugmentedModel) else model


@dataclass
class FilterState:
    """State estimate and its error covariance (a-priori or a-posteriori)."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.P = _mat(self.P, rows=self.x.size, cols=self.x.size, name="P")

    def copy(self) -> "FilterState":
        return FilterState(self.x.copy(), self.P.copy())


@dataclass
class RegressionForm:
    """Whitened regression ``T = W x + zeta`` for one measurement update.

    ``B_p`` and ``B_r`` are lower Cholesky factors of the prior covariance and
    of R. Rows ``0..n-1`` of T and W are the process channels, the remaining
    ``m`` rows the measurement channels.
    """

    T: np.ndarray
    W: np.ndarray
    B_p: np.ndarray
    B_r: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def errors(self, x) -> np.ndarray:
        return self.T - self.W @ np.asarray(x, dtype=float)


@dataclass
class GmkmckfConfig:
    """Kernel and stopping rule for the fixed-point update.

    Args:
        kernel: n + m bandwidths, process channels first.
        m_iter: maximum number of fixed-point iterations.
        eps_stop: threshold on ``||x_t - x_{t-1}|| / ||x_t||``.
        floor: lower clamp on ``|e|`` inside the weights.
    """

    kernel: KernelConfig
    m_iter: int = 5
    eps_stop: float = 1e-6
    floor: float = ERROR_FLOOR

    def __post_init__(self):
        if int(self.m_iter) != self.m_iter or self.m_iter < 1:
            raise ValueError("m_iter must be a positive integer")
        self.m_iter = int(self.m_iter)
        if not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")


def cholesky_jitter(M: np.ndarray, retries: int = 3) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter if the matrix is semidefinite.

    The jitter starts at ``1e-12 * trace(M) / n`` and grows tenfold per retry.
    """
    L, info = lapack.dpotrf(M, lower=1)
    if info == 0:
        return L
    n = M.shape[0]
    scale = max(np.trace(M) / n, np.finfo(float).tiny)
    jitter = 1e-12 * scale
    for _ in range(retries):
        try:
            return np.linalg.cholesky(M + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10
    raise np.linalg.LinAlgError("Cholesky factorization failed after jitter retries")


def kf_predict(state: FilterState, model: ModelLike, u=None) -> FilterState:
    """Time update: ``x- = A x+ + F u``, ``P- = A P+ A' + Q``."""
    model = as_linear(model)
    A = model.A
    if state.x.size != model.n:
        raise ValueError(f"state has size {state.x.size}, model expects {model.n}")
    x = A @ state.x
    if u is not None and model.p:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.size != model.p:
            raise ValueError(f"input has size {u.size}, model expects {model.p}")
        x = x + model.F @ u
    P = _symmetrize(A @ state.P @ A.T + model.Q)
    return FilterState(x, P)


def _check_measurement(model: LinearModel, y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != model.m:
        raise ValueError(f"measurement has size {y.size}, model expects {model.m}")
    return y


def kalman_gain(P, C, R) -> np.ndarray:
    """``P C' (C P C' + R)^-1``; raises ``LinAlgError`` on a singular innovation covariance."""
    S = C @ P @ C.T + R
    PCt = P @ C.T
    try:
        return np.linalg.solve(S, PCt.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc


def kf_update(state: FilterState, model: ModelLike, y) -> FilterState:
    """Measurement update of the standard Kalman filter."""
    model = as_linear(model)
    y = _check_measurement(model, y)
    K = kalman_gain(state.P, model.C, model.R)
    x = state.x + K @ (y - model.C @ state.x)
    P = _symmetrize((np.eye(model.n) - K @ model.C) @ state.P)
    return FilterState(x, P)


def joseph_covariance(P, K, C, R) -> np.ndarray:
    IKC = np.eye(P.shape[0]) - K @ C
    return _symmetrize(IKC @ P @ IKC.T + K @ R @ K.T)


def build_regression(state: FilterState, model: ModelLike, y) -> RegressionForm:
    """Whiten ``[x-; y] = [I; C] x + nu`` by ``blockdiag(B_p, B_r)^-1``."""
    model = as_linear(model)
    y = _check_measurement(model, y)
    B_p = cholesky_jitter(state.P)
    B_r = cholesky_jitter(model.R)
    Bp_inv = _tri_inv(B_p)
    Br_inv = _tri_inv(B_r)
    T = np.concatenate([Bp_inv @ state.x, Br_inv @ y])
    W = np.vstack([Bp_inv, Br_inv @ model.C])
    return RegressionForm(T, W, B_p, B_r)


def _tri_inv(L):
    inv, info = lapack.dtrtri(L, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError("singular Cholesky factor")
    return inv


def _spd_solve(H, B):
    """Solve ``H X = B`` for symmetric positive definite H, falling back to LU."""
    _, X, info = lapack.dposv(H, B)
    if info == 0:
        return X
    try:
        return np.linalg.solve(H, B)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular weighted normal matrix") from exc


def _weights(e, alpha, betas, floor):
    a = np.maximum(np.abs(e), floor)
    # cap |e/beta| so the power stays finite; exp(-e**700) is already 0
    g = np.exp(-(np.minimum(a / betas, math.exp(min(700.0 / alpha, 709.0))) ** alpha))
    if alpha != 2:
        g = g * a ** (alpha - 2)
    return np.maximum(g, WEIGHT_FLOOR)


def gl_kf_objective(x, form: RegressionForm, kernel: KernelConfig) -> float:
    """Generalized loss of the whitened residuals ``T - W x``."""
    return gl_loss(form.errors(x), kernel)


def gmkmckf_update(state: FilterState, model: ModelLike, y, cfg: GmkmckfConfig):
    """Robust measurement update by fixed-point iteration in gain form.

    Starting from the prior mean, each iteration weights the whitened
    residuals of the previous iterate, which inflates the prior and measurement
    covariances by the inverse weights, and recomputes the gain. The final
    covariance uses the Joseph form with the original prior covariance and R.

    Returns:
        ``(posterior, iterations, converged)``. ``converged`` is False when the
        loop stopped at ``m_iter`` with relative change still above ``eps_stop``.
    """
    model = as_linear(model)
    y = _check_measurement(model, y)
    n, m = model.n, model.m
    kernel = cfg.kernel
    if kernel.channels != n + m:
        raise ValueError(f"kernel has {kernel.channels} bandwidths, need n + m = {n + m}")
    C = model.C
    x_prior = state.x
    B_p = cholesky_jitter(state.P)
    B_r = cholesky_jitter(model.R)
    Bp_inv = _tri_inv(B_p)
    Br_inv = _tri_inv(B_r)
    T = np.concatenate([Bp_inv @ x_prior, Br_inv @ y])
    W = np.vstack([Bp_inv, Br_inv @ C])
    innovation = y - C @ x_prior
    alpha, betas = kernel.alpha, kernel.beta_array
    # unit weights everywhere: the first iterate is already the fixed point
    stationary = alpha == 2 and not np.any(np.isfinite(betas))

    x_prev = x_prior
    converged = False
    t = 0
    K = None
    while t < cfg.m_iter:
        t += 1
        g = _weights(T - W @ x_prev, alpha, betas, cfg.floor)
        # information form of P~ C' (C P~ C' + R~)^-1: multiplies by the weights
        # instead of dividing, so a nearly rejected channel cannot cancel out R~
        Wg = W.T * g
        K = _spd_solve(Wg @ W, Wg[:, n:] @ Br_inv)
        x_new = x_prior + K @ innovation
        step = x_new - x_prev
        x_prev = x_new
        if stationary or math.sqrt(step @ step) <= cfg.eps_stop * math.sqrt(x_new @ x_new):
            converged = True
            break
    P = joseph_covariance(state.P, K, C, model.R)
    return FilterState(x_prev, P), t, converged


def regression_fixed_point(W, T, kernel: KernelConfig, x0=None, max_iter: int = 50,
                           tol: float = 1e-10, floor: float = ERROR_FLOOR):
    """Iterate ``x = (W' M W)^-1 W' M T`` with ``M = diag(g(T - W x))``.

    This is the regression-form equivalent of :func:`gmkmckf_update`, usable on
    arbitrary ``(W, T)`` pairs.

    Returns:
        ``(x, iterations, converged)``.
    """
    W = _mat(W, name="W")
    T = np.asarray(T, dtype=float).reshape(-1)
    kernel.check(T)
    x = np.zeros(W.shape[1]) if x0 is None else np.asarray(x0, dtype=float).copy()
    betas = kernel.beta_array
    for t in range(1, max_iter + 1):
        g = _weights(T - W @ x, kernel.alpha, betas, floor)
        Wg = W.T * g
        x_new = np.linalg.solve(Wg @ W, Wg @ T)
        change = np.linalg.norm(x_new - x)
        x = x_new
        if change <= tol * np.linalg.norm(x):
            return x, t, True
    return x, max_iter, False


class KalmanObserver:
    """Stateful Kalman filter driven by ``update(y)`` then ``predict(u)``."""

    def __init__(self, model: ModelLike, x0, P0):
        self.model = as_linear(model)
        self.state = FilterState(x0, P0)
        self.iterations = 1
        self.converged = True

    @property
    def estimate(self) -> np.ndarray:
        return self.state.x

    def predict(self, u=None) -> None:
        self.state = kf_predict(self.state, self.model, u)

    def update(self, y) -> None:
        self.state = kf_update(self.state, self.model, y)


class GmkmckfObserver(KalmanObserver):
    """Kalman prediction with the robust fixed-point measurement update."""

    def __init__(self, model: ModelLike, x0, P0, cfg: GmkmckfConfig):
        super().__init__(model, x0, P0)
        self.cfg = cfg

    def update(self, y) -> None:
        self.state, self.iterations, self.converged = gmkmckf_update(
            self.state, self.model, y, self.cfg)


@dataclass
class Trajectory:
    """Filtered states (initial state first) and per-step diagnostics."""

    states: list
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    converged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def means(self) -> np.ndarray:
        return np.array([s.x for s in self.states])


def filter_trajectory(model: ModelLike, initial: FilterState, inputs: Sequence,
                      measurements: Sequence, cfg: Optional[GmkmckfConfig] = None) -> Trajectory:
    """Fold predict/update over paired input and measurement sequences.

    Step k predicts with ``inputs[k]`` and then updates with
    ``measurements[k]``. ``cfg=None`` runs the plain Kalman filter.
    """
    if len(inputs) != len(measurements):
        raise ValueError("inputs and measurements must have equal length")
    model = as_linear(model)
    obs = (KalmanObserver(model, initial.x, initial.P) if cfg is None
           else GmkmckfObserver(model, initial.x, initial.P, cfg))
    states = [initial.copy()]
    iters, conv = [], []
    for u, y in zip(inputs, measurements):
        obs.predict(u)
        obs.update(y)
        states.append(obs.state.copy())
        iters.append(obs.iterations)
        conv.append(obs.converged)
    return Trajectory(states, np.array(iters, dtype=int), np.array(conv, dtype=bool))
