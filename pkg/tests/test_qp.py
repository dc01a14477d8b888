import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import projected_gradient_qp
from tirs.qp import OPTIMAL, QPProblem, QPSolution, regularized_hessian, solve, verify_kkt


def random_problem(rng, n_max=14, m_max=84):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    B = rng.normal(size=(n, n))
    H = B @ B.T + 0.1 * np.eye(n)
    g = 3.0 * rng.normal(size=n)
    A = rng.normal(size=(m, n))
    # bounds around a known interior point keep the problem feasible
    c = A @ (0.3 * rng.normal(size=n))
    lb, ub = c - rng.uniform(0, 1, m), c + rng.uniform(0, 1, m)
    lb[rng.random(m) < 0.3] = -np.inf
    ub[rng.random(m) < 0.3] = np.inf
    return QPProblem(H, g, A, lb, ub)


def test_unconstrained_matches_linear_solve():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        B = rng.normal(size=(n, n))
        H, g = B @ B.T + np.eye(n), rng.normal(size=n)
        sol = solve(QPProblem(H, g))
        np.testing.assert_allclose(sol.x, -np.linalg.solve(H, g), atol=1e-10)
        assert sol.kkt_residual < 1e-10


def test_one_dimensional_clamp():
    sol = solve(QPProblem([[2.0]], [-2.0], [[1.0]], [0.0], [0.3]))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(0.3, abs=1e-14)
    assert sol.active_set == (0,) and sol.active_sides == (-1,)


def test_random_six_dimensional_problems_match_oracle():
    rng = np.random.default_rng(6)
    for _ in range(100):
        B = rng.normal(size=(6, 6))
        H, g = B @ B.T + 0.1 * np.eye(6), rng.normal(size=6)
        P = QPProblem(H, g, np.eye(6), -0.2 * np.ones(6), 0.2 * np.ones(6))
        x_ref = projected_gradient_qp(P.H, P.g, P.A, P.lb, P.ub)
        assert abs(P.objective(solve(P).x) - P.objective(x_ref)) <= 1e-8


def test_thousand_random_problems_match_projected_gradient_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        P = random_problem(rng)
        sol = solve(P)
        assert sol.status == OPTIMAL
        x_ref = projected_gradient_qp(P.H, P.g, P.A, P.lb, P.ub)
        f_ref = P.objective(x_ref)
        worst = max(worst, abs(P.objective(sol.x) - f_ref) / max(1.0, abs(f_ref)))
    assert worst <= 1e-8


@given(st.integers(0, 2**32 - 1))
def test_optimal_solutions_are_feasible_with_small_kkt_residual(seed):
    P = random_problem(np.random.default_rng(seed))
    sol = solve(P)
    ax = P.A @ sol.x
    assert np.all(ax >= P.lb - 1e-8) and np.all(ax <= P.ub + 1e-8)
    assert sol.kkt_residual < 1e-6


@given(st.integers(0, 2**32 - 1))
def test_warm_start_gives_the_same_answer(seed):
    P = random_problem(np.random.default_rng(seed))
    cold = solve(P)
    warm = solve(P, warm_start=cold)
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-9)
    # a poor warm start is rejected rather than trusted
    bad = solve(P, warm_start=list(range(min(P.A.shape[0], P.n))))
    assert abs(P.objective(bad.x) - P.objective(cold.x)) <= 1e-8 * max(1.0, abs(P.objective(cold.x)))


def test_kkt_residual_detects_non_optimality():
    H, g = np.diag([2.0, 3.0]), np.array([-1.0, 1.0])
    P = QPProblem(H, g)
    sol = solve(P)
    assert verify_kkt(P, sol) < 1e-10
    off = QPSolution(sol.x + 0.01, OPTIMAL, 0.0)
    assert verify_kkt(P, off) > 1e-3


def test_active_bound_complementarity():
    P = QPProblem(np.eye(2), [-1.0, -1.0], np.eye(2), [-np.inf, -np.inf], [0.5, 2.0])
    sol = solve(P)
    np.testing.assert_allclose(sol.x, [0.5, 1.0], atol=1e-12)
    assert verify_kkt(P, sol) < 1e-10
    assert sol.multipliers[1] == 0.0


def test_infeasible_problem_reported():
    sol = solve(QPProblem(np.eye(1), [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0]))
    assert sol.status == "infeasible"
    assert not sol.ok


def test_equality_rows():
    P = QPProblem(np.eye(3), np.zeros(3), [[1.0, 1.0, 1.0]], [1.0], [1.0])
    np.testing.assert_allclose(solve(P).x, np.full(3, 1 / 3), atol=1e-12)


def test_singular_hessian_is_regularised_only_when_needed():
    H = np.diag([1.0, 0.0])
    Hr, _ = regularized_hessian(H)
    assert Hr[1, 1] > 0.0
    H2 = np.diag([1.0, 2.0])
    assert regularized_hessian(H2)[0] is H2


def test_problem_validation():
    with pytest.raises(ValueError):
        QPProblem(np.eye(2), np.zeros(3))
    with pytest.raises(ValueError):
        QPProblem([[1.0, 2.0], [0.0, 1.0]], np.zeros(2))
    with pytest.raises(ValueError):
        QPProblem(np.eye(1), [0.0], [[1.0]], [1.0], [0.0])
    with pytest.raises(ValueError):
        solve(QPProblem(np.eye(1), [0.0], [[1.0]], [0.0], [1.0]), warm_start=[3])
