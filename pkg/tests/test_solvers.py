import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from builders import random_device_problem

from adamuc.solvers import (DeviceProblem, LpProblem, QpProblem, device_lp, enumerate_device,
                            sequence_allowed, solve_device_milp, solve_lp, solve_qp)


# -- LP ------------------------------------------------------------------------------

def test_lp_single_bound():
    res = solve_lp(LpProblem(np.array([1.0]), lb=3.0))
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(3.0)


def test_lp_textbook_simplex():
    res = solve_lp(LpProblem(np.array([-1.0, -1.0]), sp.csr_matrix([[1.0, 1.0]]), np.array([1.0])))
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-1.0)
    assert res.primal_residual < 1e-8 and res.kkt_residual < 1e-8


def test_lp_infeasible_and_unbounded():
    infeas = LpProblem(np.array([1.0]), sp.csr_matrix([[1.0]]), np.array([-1.0]), lb=0.0)
    assert solve_lp(infeas).status == "infeasible"
    assert solve_lp(LpProblem(np.array([-1.0]), lb=0.0)).status == "unbounded"


def vertex_enumeration(c, A, b):
    """min c^T x over {A x <= b, x >= 0} by visiting every basic solution."""
    m, n = A.shape
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = np.inf
    for rows in itertools.combinations(range(m + n), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, c @ x)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.1, 1.0, (5, 8))  # positive rows keep the polytope bounded
    b = rng.uniform(1.0, 3.0, 5)
    c = rng.normal(size=8)
    res = solve_lp(LpProblem(c, sp.csr_matrix(A), b))
    assert res.status == "optimal"
    assert res.objective == pytest.approx(vertex_enumeration(c, A, b), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_random_lp_is_certified_by_duality(seed):
    rng = np.random.default_rng(100 + seed)
    A = rng.normal(size=(20, 40))
    x_feas = rng.uniform(0, 1, 40)
    b = A @ x_feas + rng.uniform(0.1, 1.0, 20)
    c = rng.normal(size=40)
    res = solve_lp(LpProblem(c, sp.csr_matrix(A), b, lb=0.0, ub=1.0))
    assert res.status == "optimal"
    assert res.primal_residual < 1e-8
    assert res.kkt_residual < 1e-8
    # dual objective of min c.x, Ax <= b, 0 <= x <= 1 with y = marginals <= 0
    y = res.duals_ub
    assert np.all(y <= 1e-12)
    reduced = c - A.T @ y
    dual = b @ y + np.minimum(reduced, 0.0).sum()
    assert dual == pytest.approx(res.objective, abs=1e-8)


def test_lp_is_deterministic():
    rng = np.random.default_rng(7)
    A = sp.csr_matrix(rng.normal(size=(10, 15)))
    prob = LpProblem(rng.normal(size=15), A, np.ones(10), lb=0.0, ub=2.0)
    a, b = solve_lp(prob), solve_lp(prob)
    assert np.array_equal(a.x, b.x)


# -- QP --------------------------------------------------------------------------------

def test_qp_unconstrained():
    res = solve_qp(QpProblem(np.array([[2.0]]), np.array([-2.0])))
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(1.0)


def test_qp_active_bound():
    res = solve_qp(QpProblem(np.array([[2.0]]), np.array([0.0]), lb=2.0))
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(2.0)
    assert res.kkt_residual < 1e-7


@pytest.mark.parametrize("seed", range(8))
def test_qp_matches_equality_kkt_solve(seed):
    rng = np.random.default_rng(seed)
    n, m = 12, 4
    B = rng.normal(size=(n, n))
    Q = B @ B.T + np.eye(n)
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([-c, b]))[:n]
    res = solve_qp(QpProblem(Q, c, A_eq=A, b_eq=b))
    assert res.status == "optimal"
    assert np.abs(res.x - ref).max() < 1e-8
    assert res.kkt_residual < 1e-7


@pytest.mark.parametrize("seed", range(8))
def test_qp_with_inequalities_satisfies_kkt(seed):
    rng = np.random.default_rng(50 + seed)
    n = 10
    B = rng.normal(size=(n, n))
    Q = B @ B.T + 0.1 * np.eye(n)
    c = 3 * rng.normal(size=n)
    A = rng.normal(size=(6, n))
    b = rng.uniform(0.1, 1.0, 6)
    res = solve_qp(QpProblem(Q, c, A_ub=A, b_ub=b, lb=-1.0, ub=1.0))
    assert res.status == "optimal"
    assert res.kkt_residual < 1e-7
    assert np.all(A @ res.x <= b + 1e-8)
    assert np.all(np.abs(res.x) <= 1 + 1e-8)
    mu = res.multipliers["ineq"]
    assert np.all(mu >= -1e-9)
    assert np.abs(mu * (A @ res.x - b)).max() < 1e-8


def test_qp_fixed_variables_are_substituted():
    Q = np.eye(3)
    res = solve_qp(QpProblem(Q, np.array([-1.0, -1.0, -1.0]), lb=np.array([0.0, 0.5, 0.0]),
                             ub=np.array([2.0, 0.5, 2.0])))
    assert res.x.tolist() == pytest.approx([1.0, 0.5, 1.0])


def test_qp_infeasible():
    res = solve_qp(QpProblem(np.eye(1), np.zeros(1), A_ub=np.array([[1.0]]), b_ub=np.array([-1.0]),
                             lb=0.0))
    assert res.status == "infeasible"


# -- device projection --------------------------------------------------------------

def recheck_device(prob, sol, tol=1e-8):
    """Independent feasibility check of a device projection."""
    T = prob.T
    u, p, q, r = sol.u, sol.p_on, sol.q, sol.r
    assert set(np.unique(u)) <= {0.0, 1.0}
    assert sequence_allowed(prob, u.astype(int))
    assert np.all(p >= prob.p_min - tol) and np.all(p <= prob.p_max + tol)
    assert np.all(q >= prob.q_min - tol) and np.all(q <= prob.q_max + tol)
    assert np.all(r >= -tol) and np.all(r <= prob.r_max + tol)
    A_up, A_dn, B_up, B_dn = prob.caps
    up = [0, 2, 4]   # rgu, scr, rru_on
    dn = [1, 6]      # rgd, rrd_on
    P = u * p
    prevP = np.concatenate([[prob.u0 * prob.p0], P[:-1]])
    prevu = np.concatenate([[prob.u0], u[:-1]])
    for t in range(T):
        assert u[t] * p[t] + r[t, up].sum() <= u[t] * A_up[t] + tol
        assert -u[t] * p[t] + r[t, dn].sum() <= u[t] * A_dn[t] + tol
        assert u[t] * q[t] + r[t, 8] <= u[t] * B_up[t] + tol
        assert -u[t] * q[t] + r[t, 9] <= u[t] * B_dn[t] + tol
        assert r[t, 3] + r[t, 5] <= (1 - u[t]) * prob.p_max[t] + tol
        assert r[t, 7] <= (1 - u[t]) * prob.p_max[t] + tol
        su, sd = max(u[t] - prevu[t], 0), max(prevu[t] - u[t], 0)
        assert P[t] - prevP[t] <= prob.ramp_up + su * prob.ramp_su + tol
        assert prevP[t] - P[t] <= prob.ramp_down + sd * prob.ramp_sd + tol


def test_rounding_dominance():
    rng = np.random.default_rng(0)
    prob = random_device_problem(rng, 2, u0=1, ramp=10.0)
    prob.u_ref = np.array([0.9, 0.95])
    sol = solve_device_milp(prob)
    assert sol.u.tolist() == [1.0, 1.0]


def test_min_uptime_forbids_short_run():
    rng = np.random.default_rng(1)
    prob = random_device_problem(rng, 2, min_up=2, u0=0)
    prob.init_dwell = 5
    prob.u_ref = np.array([0.6, 0.1])
    sol = solve_device_milp(prob)
    assert sol.u.tolist() in ([0.0, 0.0], [1.0, 1.0])
    ref = enumerate_device(prob)
    assert sol.objective == pytest.approx(ref.objective, abs=1e-9)
    assert sol.u.tolist() == ref.u.tolist()


def test_illegal_initial_conditions_are_infeasible():
    rng = np.random.default_rng(2)
    prob = random_device_problem(rng, 3, min_up=3, u0=1)
    prob.init_dwell = 1
    prob.fixed = np.array([0.0, np.nan, np.nan])
    assert solve_device_milp(prob).status == "infeasible"
    assert enumerate_device(prob).status == "infeasible"


@pytest.mark.parametrize("seed", range(20))
def test_search_matches_enumeration_for_six_periods(seed):
    rng = np.random.default_rng(seed)
    prob = random_device_problem(rng, 6, min_up=int(rng.integers(1, 4)), min_down=int(rng.integers(1, 4)))
    sol, ref = solve_device_milp(prob), enumerate_device(prob)
    assert sol.status == ref.status
    if ref.status == "optimal":
        assert sol.objective == pytest.approx(ref.objective, abs=1e-8)
        assert sol.u.tolist() == ref.u.tolist()
        recheck_device(prob, sol)


def test_search_matches_enumeration_on_many_short_horizons():
    rng = np.random.default_rng(123)
    for _ in range(100):
        T = int(rng.integers(1, 6))
        prob = random_device_problem(rng, T, min_up=int(rng.integers(1, 4)),
                              min_down=int(rng.integers(1, 4)))
        if rng.random() < 0.3:
            prob.fixed = np.where(rng.random(T) < 0.4, rng.integers(0, 2, T).astype(float), np.nan)
        sol, ref = solve_device_milp(prob), enumerate_device(prob)
        assert sol.status == ref.status
        if ref.status == "optimal":
            assert sol.objective == pytest.approx(ref.objective, abs=1e-8)
            assert sol.u.tolist() == ref.u.tolist()


def test_fixed_sequence_lp_is_zero_at_a_feasible_target():
    rng = np.random.default_rng(4)
    prob = random_device_problem(rng, 3, u0=1, ramp=10.0)
    prob.p_ref = prob.p_min.copy()
    prob.q_ref = np.zeros(3)
    prob.r_ref = np.zeros((3, 10))
    cost, x = device_lp(prob, (1, 1, 1))
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert x[:3] == pytest.approx(prob.p_min)
