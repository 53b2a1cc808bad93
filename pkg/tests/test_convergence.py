import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gmkmckf.convergence import (ConvergenceQuery, beta_plus, beta_star, certify, min_eigen_sym,
                                 phi, psi, xi_bound)
from gmkmckf.correntropy import KernelConfig
from gmkmckf.filters import FilterState, LinearModel, build_regression, regression_fixed_point


def unit_query(gamma=2.0, eta=0.5):
    return ConvergenceQuery(np.array([[1.0]]), np.array([1.0]), gamma=gamma, eta=eta)


def random_query(rng, n, m):
    return ConvergenceQuery(rng.standard_normal((n + m, n)), rng.standard_normal(n + m))


def test_min_eigen_examples():
    assert min_eigen_sym(np.eye(3)) == pytest.approx(1.0)
    assert min_eigen_sym(np.diag([2.0, 5.0, 0.5])) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        min_eigen_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_min_eigen_against_characteristic_polynomial():
    rng = np.random.default_rng(0)
    for _ in range(20):
        B = rng.standard_normal((4, 4))
        M = B + B.T
        roots = np.roots(np.poly(M))
        assert min_eigen_sym(M) == pytest.approx(np.min(roots.real), rel=1e-8, abs=1e-8)


def test_xi_examples():
    assert xi_bound(unit_query()) == pytest.approx(1.0)
    q = ConvergenceQuery(np.array([[2.0]]), np.array([3.0]), gamma=5.0)
    assert xi_bound(q) == pytest.approx(1.5)


def test_xi_scale():
    rng = np.random.default_rng(1)
    q = random_query(rng, 3, 1)
    q2 = ConvergenceQuery(2 * q.W, q.t)
    assert xi_bound(q2) == pytest.approx(xi_bound(q) / 2, rel=1e-12)


def test_xi_rank_deficient():
    with pytest.raises(ValueError):
        ConvergenceQuery(np.array([[1.0, 1.0], [2.0, 2.0]]), np.array([1.0, 1.0]))


def test_phi_closed_form():
    q = unit_query()
    assert phi(3.0, q) == pytest.approx(math.e, rel=1e-14)
    for beta in (0.7, 2.0, 11.0):
        assert phi(beta, q) == pytest.approx(math.exp(9 / beta ** 2), rel=1e-13)


def test_phi_asymptote_and_monotone():
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = random_query(rng, 3, 1)
        scale = q.gamma * q.row_l1.max() + np.abs(q.t).max()
        assert phi(1e8 * scale, q) == pytest.approx(xi_bound(q), rel=1e-6)
        grid = np.geomspace(0.3 * scale, 30 * scale, 60)
        vals = np.array([phi(b, q) for b in grid])
        assert np.all(np.diff(vals) < 0)


def test_beta_star_examples():
    # for w = t = 1, phi(beta) = exp((gamma + 1)^2 / beta^2), so beta* = (gamma + 1) / sqrt(ln gamma)
    for gamma in (2.0, math.e, 5.0):
        assert beta_star(unit_query(gamma=gamma)) == pytest.approx(
            (gamma + 1) / math.sqrt(math.log(gamma)), rel=1e-9)
    low = ConvergenceQuery(np.array([[1.0]]), np.array([1.0]), gamma=0.5)
    assert beta_star(low) is None and beta_plus(low) is None


def test_beta_star_reevaluation():
    rng = np.random.default_rng(3)
    for _ in range(30):
        q = random_query(rng, int(rng.integers(1, 4)), 1)
        b = beta_star(q)
        assert phi(b, q) == pytest.approx(q.gamma, rel=1e-8)


def test_psi_symbolic():
    beta = sp.symbols("beta", positive=True)
    expr = 18 * sp.exp(9 / beta ** 2) / beta ** 2
    q = unit_query()
    for b in (1.5, 3.0, 6.0, 40.0):
        assert psi(b, q) == pytest.approx(float(expr.subs(beta, b)), rel=1e-13)


def test_psi_limits_and_monotone():
    rng = np.random.default_rng(4)
    q = random_query(rng, 2, 1)
    grid = np.geomspace(1e-1, 1e6, 80)
    vals = np.array([psi(b, q) for b in grid])
    assert np.all(np.diff(vals[np.isfinite(vals)]) < 0)
    assert psi(1e-3, q) > 1e12 and psi(1e9, q) < 1e-6


def test_beta_plus_reevaluation():
    rng = np.random.default_rng(5)
    for _ in range(30):
        q = random_query(rng, int(rng.integers(1, 4)), 1)
        assert psi(beta_plus(q), q) == pytest.approx(q.eta, rel=1e-8)


def test_certify_statuses():
    rng = np.random.default_rng(6)
    q = random_query(rng, 2, 1)
    c = certify(q)
    assert c.status == "certified"
    assert c.recommended_min_beta == max(c.beta_star, c.beta_plus)
    bad = certify(ConvergenceQuery(q.W, q.t, gamma=0.5 * xi_bound(q)))
    assert bad.status == "no solution" and bad.recommended_min_beta is None
    odd = certify(ConvergenceQuery(q.W, q.t, alpha=1.6))
    assert odd.status == "uncertified" and odd.xi is None


def test_query_validation():
    with pytest.raises(ValueError):
        ConvergenceQuery(np.eye(2), np.ones(3))
    with pytest.raises(ValueError):
        ConvergenceQuery(np.eye(2), np.ones(2), eta=1.0)
    with pytest.raises(ValueError):
        ConvergenceQuery(np.eye(2), np.ones(2), gamma=-1.0)
    with pytest.raises(ValueError):
        phi(0.0, unit_query())


def test_query_from_regression():
    model = LinearModel([[1.0]], None, [[1.0]], [[0.0]], [[1.0]])
    form = build_regression(FilterState([2.0], [[4.0]]), model, [3.0])
    q = ConvergenceQuery.from_regression(form)
    np.testing.assert_allclose(q.W[:, 0], [0.5, 1.0])
    np.testing.assert_allclose(q.t, [1.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 3))
def test_certified_bandwidth_converges(seed, n):
    rng = np.random.default_rng(seed)
    q = random_query(rng, n, 1)
    c = certify(q)
    kernel = KernelConfig.uniform(2.0, c.recommended_min_beta, q.W.shape[0])
    x, iters, conv = regression_fixed_point(q.W, q.t, kernel, max_iter=50, tol=1e-10)
    assert conv and iters <= 50
    # the certified ball is invariant
    assert np.abs(x).sum() <= q.gamma * (1 + 1e-9)
