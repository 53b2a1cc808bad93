"""One-link manipulator, its Euler discretization, the tracking controller and the step disturbance.

State ordering is ``[d, theta_dot, theta]`` (disturbance first). Angles are in
degrees throughout, torques in N*m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filters import AugmentedModel, LinearModel


@dataclass(frozen=True)
class PlantConfig:
    """Manipulator ``I_m th'' + b_m th' + k_m th + m g l sin(th) = tau + d``.

    The gravity term is evaluated as ``sin`` of the angle converted to radians.
    """

    I_m: float = 0.1
    b_m: float = 1.0
    k_m: float = 0.1
    mass: float = 1.0
    gravity: float = 1.0
    length: float = 1.0
    T: float = 0.01

    def __post_init__(self):
        if not (self.I_m > 0 and self.T > 0):
            raise ValueError("inertia and sampling time must be positive")
        if self.b_m < 0 or self.k_m < 0:
            raise ValueError("damping and stiffness must be nonnegative")

    @property
    def mgl(self) -> float:
        return self.mass * self.gravity * self.length

    def gravity_torque(self, theta_deg: float) -> float:
        return self.mgl * math.sin(math.radians(theta_deg))


@dataclass(frozen=True)
class ControllerConfig:
    """PD gains and the sinusoidal reference ``amplitude * sin(omega * t)`` (deg).

    The closed-loop Euler factor on the rate error is ``1 - T (b_m + kd) / I_m``,
    so ``kd`` above about 19 destabilizes the default plant.
    """

    kp: float = 100.0
    kd: float = 10.0
    amplitude: float = 15.0
    omega: float = 0.4 * math.pi

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("controller gains must be nonnegative")

    def reference(self, t: float):
        """``(theta_d, theta_d_dot, theta_d_ddot)`` at time ``t`` seconds."""
        a, w = self.amplitude, self.omega
        s, c = math.sin(w * t), math.cos(w * t)
        return a * s, a * w * c, -a * w * w * s


@dataclass(frozen=True)
class DisturbanceProfile:
    """Step of ``amplitude`` applied on samples ``on_step..off_step`` inclusive."""

    amplitude: float = 50.0
    on_step: int = 400
    off_step: int = 600

    def __post_init__(self):
        if self.on_step > self.off_step:
            raise ValueError("on_step must not exceed off_step")


def disturbance_signal(k: int, profile: DisturbanceProfile, noise: float = 0.0) -> float:
    """True disturbance at sample ``k``: the step inside the window plus ``noise``."""
    if k < 0:
        raise ValueError("sample index must be nonnegative")
    on = profile.on_step <= k <= profile.off_step
    return (profile.amplitude if on else 0.0) + noise


def discretize(cfg: PlantConfig, Q_x=None, R=None, Q_d=0.0):
    """Euler discretization of the feedback-linearized manipulator.

    Returns:
        ``(base, augmented)`` where ``base`` is the 2-state model over
        ``[theta_dot, theta]`` and ``augmented`` appends the disturbance in
        front. ``augmented.linear()`` is the 3-state observer model.
    """
    T, I, b, k = cfg.T, cfg.I_m, cfg.b_m, cfg.k_m
    A = np.array([[1 - b * T / I, -k * T / I], [T, 1.0]])
    F = np.array([[T / I], [0.0]])
    C = np.array([[0.0, 1.0]])
    Q_x = np.zeros((2, 2)) if Q_x is None else np.atleast_2d(Q_x)
    R = np.eye(1) if R is None else np.atleast_2d(R)
    base = LinearModel(A, F, C, Q_x, R)
    Gamma = np.array([[T / I], [0.0]])
    return base, AugmentedModel(base, Gamma, np.atleast_2d(Q_d))


def controller_step(estimate, k: int, plant: PlantConfig, ctrl: ControllerConfig):
    """Torque from the estimate ``[d_hat, theta_dot_hat, theta_hat]`` at sample ``k``.

    Returns:
        ``(tau, u)``: the motor torque and the linearized input
        ``u = u_ff + u_d + u_fb`` that the observer model sees.
    """
    d_hat, w_hat, th_hat = (float(v) for v in estimate)
    th_d, w_d, a_d = ctrl.reference(k * plant.T)
    u_ff = plant.I_m * a_d + plant.b_m * w_d + plant.k_m * th_d
    u_d = -d_hat
    u_fb = ctrl.kp * (th_d - th_hat) + ctrl.kd * (w_d - w_hat)
    u = u_ff + u_d + u_fb
    return u + plant.gravity_torque(th_hat), u


class ManipulatorPlant:
    """Truth simulator sharing the observer's discretized matrices.

    ``x`` is the true ``[d, theta_dot, theta]``. The disturbance is not
    propagated; it is reset from the profile every step.
    """

    def __init__(self, cfg: PlantConfig, profile: DisturbanceProfile, x0=None):
        self.cfg = cfg
        self.profile = profile
        _, aug = discretize(cfg)
        self.model = aug.linear()
        self.x = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.k = 0

    def measure(self, v: float = 0.0) -> np.ndarray:
        return self.model.C @ self.x + v

    def step(self, tau: float, w=(0.0, 0.0, 0.0)) -> np.ndarray:
        """Advance one sample under motor torque ``tau``; see :func:`plant_step`."""
        self.x = plant_step(self.x, self.k, self.cfg, self.profile, tau, w, self.model)
        self.k += 1
        return self.x


def plant_step(x, k: int, cfg: PlantConfig, profile: DisturbanceProfile, tau: float,
               w=(0.0, 0.0, 0.0), model: LinearModel | None = None) -> np.ndarray:
    """True state at sample ``k + 1`` from the state ``x`` at sample ``k``.

    Args:
        x: true ``[d, theta_dot, theta]`` at sample ``k``.
        tau: motor torque; the true gravity torque is subtracted from it.
        w: ``(w_d, w_theta_dot, w_theta)`` noise draws for sample ``k + 1``.
        model: observer model to reuse; rebuilt from ``cfg`` when omitted.
    """
    if model is None:
        model = discretize(cfg)[1].linear()
    x = np.asarray(x, dtype=float)
    u = tau - cfg.gravity_torque(x[2])
    nxt = model.A @ x + model.F[:, 0] * u
    nxt[0] = disturbance_signal(k + 1, profile, w[0])
    nxt[1] += w[1]
    nxt[2] += w[2]
    return nxt
