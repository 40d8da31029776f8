import numpy as np
import pytest

from grr.cpd import (
    CpdConfig,
    cover_distance,
    cpd_init,
    cpd_run,
    e_step,
    gaussian_gram,
    m_step_sigma,
    m_step_W,
    reduced_system,
)
from grr.errors import ConfigurationError, DomainError
from grr.mapspace import Box, MapSpace


def circle(n, center=(0.0, 0.0), r=1.0):
    t = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])


def e_step_oracle(mu, Y, sigma2, w):
    N, d = mu.shape
    Q = len(Y)
    P = np.zeros((Q, N))
    c = (2 * np.pi * sigma2) ** (d / 2) * w / (1 - w) * N / Q
    for i in range(Q):
        k = [np.exp(-np.sum((Y[i] - m) ** 2) / (2 * sigma2)) for m in mu]
        P[i] = np.array(k) / (sum(k) + c)
    return P


def test_single_pair_responsibility():
    P = e_step(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), 0.5)
    np.testing.assert_array_equal(P, [[1.0]])


def test_initial_variance_unit_offset():
    assert cpd_init(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]])) == 0.5


@pytest.mark.parametrize("w", [0.0, 0.2])
def test_e_step_matches_loop(w):
    rng = np.random.default_rng(0)
    mu, Y = rng.normal(size=(6, 2)), rng.normal(size=(9, 2))
    np.testing.assert_allclose(e_step(mu, Y, 0.7, w), e_step_oracle(mu, Y, 0.7, w), rtol=1e-12)


def test_m_step_zero_when_targets_match():
    X = circle(12)
    P = e_step(X, X, 1e-4)
    W = m_step_W(X, X, P, 1e-4, 1.0, 1.0)
    assert np.abs(W).max() < 1e-12


def test_woodbury_solver_matches_direct():
    X, Y = circle(15), circle(20, (0.1, 0.0))
    P = e_step(X, Y, 0.3)
    G = gaussian_gram(X, X, 1.0)
    Wd = m_step_W(X, Y, P, 0.3, 2.0, 1.0, G=G)
    We = m_step_W(X, Y, P, 0.3, 2.0, 1.0, G=G, solver="eig")
    np.testing.assert_allclose(Wd, We, atol=1e-6)


def test_variance_update_matches_direct_sum():
    rng = np.random.default_rng(2)
    T, Y = rng.normal(size=(5, 2)), rng.normal(size=(7, 2))
    P = e_step(T, Y, 1.0)
    direct = sum(P[i, j] * np.sum((Y[i] - T[j]) ** 2) for i in range(7) for j in range(5)) / (P.sum() * 2)
    assert m_step_sigma(T, Y, P) == pytest.approx(direct, rel=1e-12)


def test_translated_circle_exits_by_cover():
    X = circle(40)
    Y = circle(40, (0.3, 0.1))[::-1]
    res = cpd_run(X, Y, CpdConfig(tol_cover=1e-3, max_em_iters=500))
    assert res.converged and res.exit_reason == "cover distance"
    assert res.cover_distance < 1e-3
    assert cover_distance(Y, res.Y_aligned) == res.cover_distance


def test_energy_non_increasing():
    X = circle(30)
    Y = circle(25, (0.2, -0.1), 1.1)
    res = cpd_run(X, Y, CpdConfig(max_em_iters=40, tol_cover=1e-12, tol_coef=1e-12))
    e = np.array(res.energy)
    assert np.all(np.diff(e) <= 1e-8 * np.abs(e[:-1]))


def test_reduced_system_matches_least_squares():
    space = MapSpace(Box((-2.0, -2.0), (2.0, 2.0)), 3)
    X, Y = circle(10), circle(12, (0.1, 0.0))
    P = e_step(X, Y, 0.2)
    Psi = space.basis_eval(X, 0)
    A, b = reduced_system(X, Y, P, 0.2, 1.5, Psi)
    # oracle: gradient of sum_ij P_ij |y_i - x_j - Psi_j c|^2 / 2 + lam sigma2 |c|^2 / 2 vanishes at c
    c = np.linalg.solve(A, b)
    T = X + Psi @ c
    grad = 1.5 * 0.2 * c
    for i in range(len(Y)):
        for j in range(len(X)):
            grad -= P[i, j] * Psi[j].T @ (Y[i] - T[j])
    assert np.abs(grad).max() < 1e-10


def test_reduced_cpd_runs():
    space = MapSpace(Box((-2.0, -2.0), (2.0, 2.0)), 4)
    X, Y = circle(30), circle(30, (0.2, 0.0))
    res = cpd_run(X, Y, CpdConfig(max_em_iters=100), space=space)
    assert res.cover_distance < cover_distance(Y, X)


def test_validation():
    with pytest.raises(ConfigurationError):
        CpdConfig(w=1.0)
    with pytest.raises(DomainError):
        e_step(np.zeros((1, 2)), np.ones((1, 2)), 0.0)
