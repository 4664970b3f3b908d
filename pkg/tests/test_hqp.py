"""Strict-priority hierarchical QP solver: KKT checks, oracles, invariants."""

import copy

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import lexicographic_oracle, random_hierarchy
from wholebody.hqp import (
    HierarchySolver,
    Level,
    QpInfeasibleError,
    nullspace_basis_update,
    solve_qp,
)


# ---------------------------------------------------------------------------
# solve_qp


def test_unconstrained_minimum():
    res = solve_qp(np.eye(3), np.zeros(3))
    np.testing.assert_allclose(res.x, np.zeros(3), atol=1e-12)


def test_single_active_bound():
    # min (x - 2)^2  s.t.  x <= 1  ->  x = 1, multiplier 2
    res = solve_qp(np.array([[2.0]]), np.array([-4.0]),
                   np.array([[1.0]]), np.array([1.0]))
    assert res.x[0] == pytest.approx(1.0, abs=1e-10)
    assert res.lam[0] == pytest.approx(2.0, abs=1e-8)


def test_infeasible_detected():
    D = np.array([[1.0], [-1.0]])
    f = np.array([-1.0, -1.0])     # x <= -1 and x >= 1
    res = solve_qp(np.eye(1), np.zeros(1), D, f)
    assert res.status == "infeasible"
    assert res.most_violated is not None


def test_kkt_conditions_on_random_problems():
    rng = np.random.default_rng(20)
    for _ in range(50):
        n, m = 8, 12
        A = rng.standard_normal((n, n))
        H = A.T @ A + np.eye(n)
        g = rng.standard_normal(n)
        D = rng.standard_normal((m, n))
        f = D @ rng.standard_normal(n) + rng.uniform(0.05, 1.0, m)
        res = solve_qp(H, g, D, f)
        assert res.status == "optimal"
        # primal feasibility
        assert np.max(D @ res.x - f) <= 1e-10
        # dual feasibility (lam has one entry per constraint row)
        assert np.min(res.lam, initial=0.0) >= -1e-12
        # stationarity
        grad = H @ res.x + g + D.T @ res.lam
        np.testing.assert_allclose(grad, np.zeros(n), atol=1e-8)
        # complementarity
        slacks = f - D @ res.x
        assert np.max(np.abs(res.lam * slacks)) <= 1e-10


def test_matches_slow_oracle():
    # independent slow solver: SLSQP with exact gradients
    rng = np.random.default_rng(21)
    for _ in range(20):
        n, m = 8, 12
        A = rng.standard_normal((n, n))
        H = A.T @ A + np.eye(n)
        g = rng.standard_normal(n)
        D = rng.standard_normal((m, n))
        f = D @ rng.standard_normal(n) + rng.uniform(0.05, 1.0, m)
        res = solve_qp(H, g, D, f)
        oracle = minimize(
            lambda x: 0.5 * x @ H @ x + g @ x, np.zeros(n),
            jac=lambda x: H @ x + g,
            constraints=[{"type": "ineq", "fun": lambda x: f - D @ x,
                          "jac": lambda x: -D}],
            method="SLSQP", options={"maxiter": 500, "ftol": 1e-14})
        np.testing.assert_allclose(res.x, oracle.x, atol=1e-6)


def test_warm_start_reuses_active_set():
    H = np.array([[2.0]])
    g = np.array([-4.0])
    D = np.array([[1.0]])
    f = np.array([1.0])
    cold = solve_qp(H, g, D, f)
    warm = solve_qp(H, g, D, f, warm_active=cold.active)
    np.testing.assert_allclose(warm.x, cold.x, atol=0.0)
    assert warm.iterations <= cold.iterations


# ---------------------------------------------------------------------------
# null-space updates


def test_nullspace_full_rank_square():
    N = nullspace_basis_update(np.eye(2), np.eye(2))
    np.testing.assert_allclose(N, np.zeros((2, 2)), atol=1e-12)


def test_nullspace_axis_projector():
    N = nullspace_basis_update(np.eye(2), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(N, np.diag([0.0, 1.0]), atol=1e-12)


def test_nullspace_annihilates_rank_deficient_task():
    rng = np.random.default_rng(22)
    for _ in range(20):
        n = 6
        A = rng.standard_normal((4, n))
        A[3] = A[0] - 2.0 * A[1]
        N = nullspace_basis_update(np.eye(n), A)
        assert np.max(np.abs(A @ N)) < 1e-9
        # projector property
        np.testing.assert_allclose(N @ N, N, atol=1e-9)


# ---------------------------------------------------------------------------
# solve_hierarchy


def test_sequential_exact_solves():
    levels = [
        Level(A=np.array([[1.0, 0.0]]), b=np.array([1.0]), name="one"),
        Level(A=np.array([[1.0, 1.0]]), b=np.array([0.0]), name="two"),
    ]
    sol = HierarchySolver().solve(levels, 2)
    np.testing.assert_allclose(sol.x, [1.0, -1.0], atol=1e-8)
    assert all(d.residual_sq < 1e-12 for d in sol.per_level)


def test_clamped_lower_level():
    levels = [
        Level(A=np.array([[1.0, 0.0]]), b=np.array([1.0]),
              D=np.array([[0.0, 1.0]]), f=np.array([0.5]), name="one"),
        Level(A=np.array([[0.0, 1.0]]), b=np.array([2.0]), name="two"),
    ]
    sol = HierarchySolver().solve(levels, 2)
    np.testing.assert_allclose(sol.x, [1.0, 0.5], atol=1e-8)
    assert sol.per_level[1].residual_sq == pytest.approx((2.0 - 0.5) ** 2, abs=1e-8)


def test_level1_infeasibility_fatal():
    levels = [Level(A=np.array([[1.0]]), b=np.array([0.0]),
                    D=np.array([[1.0], [-1.0]]), f=np.array([-1.0, -1.0]),
                    name="impossible")]
    with pytest.raises(QpInfeasibleError):
        HierarchySolver().solve(levels, 1)


def test_later_level_infeasibility_degrades():
    levels = [
        Level(A=np.array([[1.0, 0.0]]), b=np.array([0.0]), name="one"),
        Level(A=np.array([[0.0, 1.0]]), b=np.array([0.0]),
              D=np.array([[0.0, 1.0], [0.0, -1.0]]), f=np.array([-1.0, -1.0]),
              name="two"),
    ]
    sol = HierarchySolver().solve(levels, 2)
    assert sol.degraded_level == 1
    assert sol.per_level[0].residual_sq < 1e-12


def test_matches_lexicographic_oracle():
    rng = np.random.default_rng(23)
    for _ in range(25):
        n_x = int(rng.integers(2, 7))
        n_lvl = int(rng.integers(1, 4))
        task_dims = [int(rng.integers(1, n_x + 1)) for _ in range(n_lvl)]
        cons = [0] * n_lvl
        cons[0] = int(rng.integers(0, 9))
        levels = random_hierarchy(rng, n_x, task_dims, cons, rank_deficient=False)
        sol = HierarchySolver().solve(copy.deepcopy(levels), n_x)
        oracle = lexicographic_oracle(levels, n_x)
        for d, r in zip(sol.per_level, oracle):
            assert abs(np.sqrt(d.residual_sq) - r) < 1e-6


def test_strict_priority_invariance():
    rng = np.random.default_rng(24)
    for _ in range(20):
        n_x = 12
        levels = random_hierarchy(rng, n_x, (3, 4, 2), (6, 4, 0))
        base = HierarchySolver().solve(copy.deepcopy(levels), n_x)
        k = int(rng.integers(1, 3))
        perturbed = copy.deepcopy(levels)
        perturbed[k].b = perturbed[k].b + rng.standard_normal(perturbed[k].b.shape)
        again = HierarchySolver().solve(perturbed, n_x)
        for j in range(k):
            assert abs(base.per_level[j].residual_sq
                       - again.per_level[j].residual_sq) < 1e-8
        # constraint accumulation on both solves
        for sol, lv in ((base, levels), (again, perturbed)):
            for level in lv:
                if level.D is not None:
                    assert np.max(level.D @ sol.x - level.f) <= 1e-8


def test_nullspace_dims_non_increasing():
    rng = np.random.default_rng(25)
    levels = random_hierarchy(rng, 10, (3, 3, 3), (4, 0, 0))
    sol = HierarchySolver().solve(levels, 10)
    dims = [d.nullspace_dim for d in sol.per_level]
    assert all(a >= b for a, b in zip(dims, dims[1:]))


def test_determinism():
    rng = np.random.default_rng(26)
    levels = random_hierarchy(rng, 8, (3, 4), (6, 0))
    a = HierarchySolver().solve(copy.deepcopy(levels), 8)
    b = HierarchySolver().solve(copy.deepcopy(levels), 8)
    assert np.array_equal(a.x, b.x)
    assert [d.residual_sq for d in a.per_level] == [d.residual_sq for d in b.per_level]


# ---------------------------------------------------------------------------
# solve_weighted


def test_weighted_single_level_equals_hierarchy():
    rng = np.random.default_rng(27)
    levels = random_hierarchy(rng, 6, (4,), (5,))
    a = HierarchySolver().solve(copy.deepcopy(levels), 6)
    b = HierarchySolver().solve_weighted(copy.deepcopy(levels), [1.0], 6)
    np.testing.assert_allclose(a.x, b.x, atol=1e-9)


def test_weighted_average_of_conflicts():
    levels = [
        Level(A=np.array([[1.0]]), b=np.array([0.0]), name="zero"),
        Level(A=np.array([[1.0]]), b=np.array([1.0]), name="one"),
    ]
    sol = HierarchySolver().solve_weighted(levels, [1.0, 1.0], 1)
    assert sol.x[0] == pytest.approx(0.5, abs=1e-9)


def test_weighted_large_weight_approaches_strict_priority():
    rng = np.random.default_rng(28)
    for _ in range(5):
        levels = random_hierarchy(rng, 4, (2, 3), (0, 0), rank_deficient=False)
        strict = HierarchySolver().solve(copy.deepcopy(levels), 4)
        weighted = HierarchySolver().solve_weighted(copy.deepcopy(levels), [1e6, 1.0], 4)
        r_strict = strict.per_level[0].residual_sq
        lv = levels[0]
        r_weighted = float(np.sum((lv.A @ weighted.x - lv.b) ** 2))
        assert abs(np.sqrt(r_weighted) - np.sqrt(r_strict)) < 1e-3
