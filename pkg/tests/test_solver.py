import numpy as np
import pytest
from scipy.optimize import minimize

from grr.errors import ConfigurationError, InfeasibleError, NumericalError
from grr.solver import SolverConfig, minimize_linconstr, minimize_nlconstr, minimize_qn


def rosenbrock(x):
    f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return f, g


def random_spd(n, seed):
    Q = np.random.default_rng(seed).normal(size=(n, n))
    return Q @ Q.T + np.eye(n)


def test_qn_quadratic_minimum():
    H = random_spd(30, 0)
    b = np.random.default_rng(1).normal(size=30)
    a, rep = minimize_qn(lambda a: (0.5 * a @ H @ a - b @ a, H @ a - b), np.zeros(30),
                         SolverConfig(grad_tol=1e-12, max_iters=2000))
    assert rep.converged
    np.testing.assert_allclose(a, np.linalg.solve(H, b), atol=1e-6)


def test_qn_rosenbrock():
    a, rep = minimize_qn(rosenbrock, np.array([-1.2, 1.0]), SolverConfig(grad_tol=1e-10))
    assert rep.converged and rep.iterations < 100
    np.testing.assert_allclose(a, [1.0, 1.0], atol=1e-5)


def test_qn_exact_preconditioner_one_step():
    H = random_spd(10, 2)
    b = np.ones(10)
    Hinv = np.linalg.inv(H)
    a, rep = minimize_qn(lambda a: (0.5 * a @ H @ a - b @ a, H @ a - b), np.zeros(10),
                         precond=lambda a, v, mem: Hinv @ v)
    assert rep.iterations == 1
    np.testing.assert_allclose(a, Hinv @ b, atol=1e-10)


def test_qn_non_finite_start():
    with pytest.raises(NumericalError):
        minimize_qn(lambda a: (np.inf, a), np.zeros(2))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(grad_tol=0)


def box_oracle(H, b, A, rhs, delta):
    cons = [{"type": "ineq", "fun": lambda a: delta - (A @ a - rhs)},
            {"type": "ineq", "fun": lambda a: delta + (A @ a - rhs)}]
    res = minimize(lambda a: 0.5 * a @ H @ a - b @ a, np.zeros(len(b)), jac=lambda a: H @ a - b,
                   constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    return res.x


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_linconstr_matches_slsqp(seed):
    rng = np.random.default_rng(seed)
    n, m = 8, 5
    H = random_spd(n, seed + 10)
    b = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    rhs = rng.normal(size=m)
    delta = 0.05
    a, rep = minimize_linconstr(lambda a: (0.5 * a @ H @ a - b @ a, H @ a - b), np.zeros(n), A, rhs, delta)
    assert np.max(np.abs(A @ a - rhs)) <= delta * (1 + 1e-9)
    np.testing.assert_allclose(a, box_oracle(H, b, A, rhs, delta), atol=1e-5)


def test_linconstr_rank_deficient_rows():
    # duplicated and combined rows: consistent but not full rank
    rng = np.random.default_rng(4)
    A0 = rng.normal(size=(3, 6))
    A = np.vstack([A0, A0[0], A0[1] + A0[2]])
    a_true = rng.normal(size=6)
    rhs = A @ a_true
    H = np.eye(6)
    a, rep = minimize_linconstr(lambda a: (0.5 * a @ a, a), np.zeros(6), A, rhs, 1e-3)
    assert np.max(np.abs(A @ a - rhs)) <= 1e-3 * (1 + 1e-9)
    np.testing.assert_allclose(a, box_oracle(H, np.zeros(6), A, rhs, 1e-3), atol=1e-5)


def test_linconstr_single_active_kkt():
    A = np.zeros((1, 5))
    A[0, 0] = 1
    a, rep = minimize_linconstr(lambda a: (a @ a, 2 * a), np.zeros(5), A, np.array([1.0]), 0.1)
    assert a[0] == pytest.approx(0.9, abs=1e-6)
    np.testing.assert_allclose(a[1:], 0, atol=1e-8)


def test_linconstr_infeasible():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(InfeasibleError):
        minimize_linconstr(lambda a: (a @ a, 2 * a), np.zeros(2), A, np.array([0.0, 1.0]), 0.1)


@pytest.mark.parametrize("start", [np.zeros(3), np.array([3.0, 3.0, 0.0])])
def test_nlconstr_ball(start):
    c = np.array([2.0, 0.0, 0.0])
    a, rep = minimize_nlconstr(lambda a: (np.sum((a - c) ** 2), 2 * (a - c)), start,
                               lambda a: (a @ a, 2 * a), 1.0)
    assert rep.converged
    np.testing.assert_allclose(a, [1.0, 0.0, 0.0], atol=1e-5)
    assert rep.constraint_violation <= 1e-6
