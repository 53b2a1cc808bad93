import math

import numpy as np
import pytest

from gmkmckf.filters import LinearModel

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def record_criterion(request):
    """Store one ``(label, passed, detail)`` line for the acceptance summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(label: str, passed: bool, detail: str):
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def random_model(rng: np.random.Generator, n: int, m: int, p: int = 1) -> LinearModel:
    """Stable random LTI system with a full-rank process covariance."""
    A = rng.standard_normal((n, n))
    A *= 0.95 / max(1e-9, np.max(np.abs(np.linalg.eigvals(A))))
    F = rng.standard_normal((n, p))
    C = rng.standard_normal((m, n))
    L = rng.standard_normal((n, n))
    Q = 0.1 * L @ L.T + 0.01 * np.eye(n)
    M = rng.standard_normal((m, m))
    R = 0.1 * M @ M.T + 0.05 * np.eye(m)
    return LinearModel(A, F, C, Q, R)


def simulate_model(model: LinearModel, rng, steps: int):
    """Inputs and measurements of a noisy rollout of ``model``."""
    n, m = model.n, model.m
    Lq, Lr = np.linalg.cholesky(model.Q), np.linalg.cholesky(model.R)
    x = rng.standard_normal(n)
    us, ys = [], []
    for _ in range(steps):
        u = rng.standard_normal(model.p)
        x = model.A @ x + model.F @ u + Lq @ rng.standard_normal(n)
        us.append(u)
        ys.append(model.C @ x + Lr @ rng.standard_normal(m))
    return us, ys


def mckf_reference_update(x_prior, P_prior, C, R, y, sigma, iters, eps):
    """Single-kernel MCKF written as weighted least squares on the whitened regression.

    Deliberately avoids the library: whitening by explicit inverse Cholesky
    factors, Gaussian weights ``exp(-e^2 / (2 sigma^2))`` and a normal-equation
    solve per iteration, starting from the prior mean.
    """
    n = x_prior.size
    Bp_inv = np.linalg.inv(np.linalg.cholesky(P_prior))
    Br_inv = np.linalg.inv(np.linalg.cholesky(R))
    D = np.vstack([Bp_inv, Br_inv @ C])
    d = np.concatenate([Bp_inv @ x_prior, Br_inv @ y])
    x = x_prior.copy()
    for _ in range(iters):
        e = d - D @ x
        g = np.exp(-e ** 2 / (2 * sigma ** 2))
        x_new = np.linalg.solve(D.T @ (g[:, None] * D), D.T @ (g * d))
        change = np.linalg.norm(x_new - x)
        x = x_new
        if change <= eps * np.linalg.norm(x):
            break
    # Joseph form with the gain implied by the weights of the last iteration;
    # K = (D' G D)^-1 D_r' G_r Br^-1, the information form of Pt C' (C Pt C' + Rt)^-1
    K = np.linalg.inv(D.T @ (g[:, None] * D)) @ (D[n:].T * g[n:]) @ Br_inv
    I_KC = np.eye(n) - K @ C
    return x, I_KC @ P_prior @ I_KC.T + K @ R @ K.T


SQRT2 = math.sqrt(2.0)
