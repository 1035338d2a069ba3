import numpy as np
import pytest
import scipy.sparse as sp

from helpers import assert_kkt, make_qp, random_qp
from oracles import brute_force_qp
from spacetime_obstacle.errors import ArgumentError, LinearAlgebraError, NonConvergenceError
from spacetime_obstacle.solver import (PdasResult, SolverOptions, kkt_ok, kkt_report,
                                       oracle_qp_solve, pdas_solve, sparse_spd_solve)


def test_diagonal_example():
    qp = make_qp(np.diag([2.0, 2.0]), [-2.0, 2.0], [0, 1], [0.0, 0.0])
    res = pdas_solve(qp)
    assert np.allclose(res.x, [0, 1]) and np.allclose(res.m, [2, 0])
    assert res.iterations <= 2 and res.converged
    assert res.active_size == 1


def test_unconstrained_single_iteration():
    S = np.array([[4.0, 1.0], [1.0, 3.0]])
    res = pdas_solve(make_qp(S, [1.0, 2.0]))
    assert res.iterations == 1
    assert np.allclose(res.x, np.linalg.solve(S, [1.0, 2.0]), atol=1e-14)


def test_far_bounds_match_unconstrained():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((6, 6))
    S, F = B @ B.T + np.eye(6), rng.standard_normal(6)
    free = pdas_solve(make_qp(S, F)).x
    low = pdas_solve(make_qp(S, F, range(6), np.full(6, -1e6))).x
    assert np.max(np.abs(free - low)) <= 1e-10


def test_spd_solve_examples():
    rhs = np.array([3.0, -1.0, 2.0])
    assert np.array_equal(sparse_spd_solve(sp.identity(3), rhs), rhs)
    x = sparse_spd_solve(sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]]), np.array([1.0, 2.0]))
    assert np.allclose(x, [1 / 11, 7 / 11], rtol=0, atol=1e-15)


def test_spd_solve_random_and_paths_agree():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((50, 50))
    S = sp.csr_matrix(B @ B.T + 50 * np.eye(50))
    rhs = rng.standard_normal(50)
    direct = sparse_spd_solve(S, rhs)
    assert np.linalg.norm(S @ direct - rhs) <= 1e-10 * np.linalg.norm(rhs)
    cg = sparse_spd_solve(S, rhs, threshold=0)
    assert np.max(np.abs(cg - direct)) <= 1e-8


def test_spd_solve_rejects_indefinite():
    with pytest.raises(LinearAlgebraError):
        sparse_spd_solve(sp.csr_matrix([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))
    with pytest.raises(LinearAlgebraError):
        sparse_spd_solve(sp.csr_matrix([[-1.0, 0.0], [0.0, 1.0]]), np.ones(2))


def test_spd_solve_shape_mismatch():
    with pytest.raises(ArgumentError):
        sparse_spd_solve(sp.identity(2), np.ones(3))


def test_cg_stagnation_is_reported():
    n = 200
    S = sp.diags(np.linspace(1, 1e6, n)) + sp.random(n, n, density=0.05, random_state=0)
    S = (S + S.T) * 0.5 + sp.identity(n) * 10
    with pytest.raises(LinearAlgebraError):
        sparse_spd_solve(S.tocsr(), np.ones(n), threshold=0, maxiter=1)


def test_oracle_examples():
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    F = np.array([1.0, 1.0])
    assert np.allclose(oracle_qp_solve(make_qp(S, F)), np.linalg.solve(S, F))
    # bounds above the unconstrained solution: x = l is KKT iff S l - F >= 0
    l = np.array([5.0, 5.0])
    x = oracle_qp_solve(make_qp(S, F, [0, 1], l))
    assert np.allclose(x, l) and np.all(S @ l - F >= 0)


def test_oracle_size_limit():
    with pytest.raises(ArgumentError):
        oracle_qp_solve(make_qp(np.eye(21), np.ones(21)))


@pytest.mark.parametrize("seed", range(40))
def test_random_against_oracles(seed):
    qp = random_qp(np.random.default_rng(seed))
    res = pdas_solve(qp)
    ref = oracle_qp_solve(qp)
    assert np.max(np.abs(res.x - ref), initial=0) <= 1e-8
    assert np.max(np.abs(ref - brute_force_qp(qp.S.toarray(), qp.F, qp.constrained,
                                              qp.bounds)), initial=0) <= 1e-10
    assert_kkt(qp, res)


def test_warm_restart_one_iteration():
    for seed in range(30):
        qp = random_qp(np.random.default_rng(100 + seed))
        res = pdas_solve(qp)
        for start in (res, res.x):
            again = pdas_solve(qp, x0=start)
            assert again.iterations == 1
            assert np.array_equal(again.active, res.active)


def test_functional_decreases_from_feasible_start():
    rng = np.random.default_rng(7)
    for _ in range(20):
        qp = random_qp(rng)
        J = lambda x: 0.5 * x @ (qp.S @ x) - qp.F @ x  # noqa: E731
        x0 = rng.standard_normal(qp.n)
        x0[qp.constrained] = np.maximum(x0[qp.constrained], qp.bounds)
        assert J(pdas_solve(qp, x0=x0).x) <= J(x0) + 1e-12


def test_nonconvergence_carries_iterate():
    qp = make_qp(np.diag([2.0, 2.0]), [-2.0, 2.0], [0, 1], [0.0, 0.0])
    with pytest.raises(NonConvergenceError) as info:
        pdas_solve(qp, max_iter=1)
    assert info.value.last_iterate is not None and info.value.iterations == 1


@pytest.mark.parametrize("kw", [{"c_a": 0.0}, {"max_iter": 0}])
def test_bad_parameters(kw):
    with pytest.raises(ArgumentError):
        pdas_solve(make_qp(np.eye(2), np.ones(2)), **kw)


def test_bad_start_shape():
    with pytest.raises(ArgumentError):
        pdas_solve(make_qp(np.eye(2), np.ones(2)), x0=np.zeros(3))


def test_invalid_constraints():
    with pytest.raises(ArgumentError):
        pdas_solve(make_qp(np.eye(2), np.ones(2), [0, 0], [0.0, 0.0]))
    with pytest.raises(ArgumentError):
        pdas_solve(make_qp(np.eye(2), np.ones(2), [0], [np.inf]))


def test_options_take_precedence():
    qp = random_qp(np.random.default_rng(11))
    res = pdas_solve(qp, options=SolverOptions(c_a=10.0, max_iter=100))
    assert np.allclose(res.x, oracle_qp_solve(qp), atol=1e-8)


def test_kkt_report_flags_violation():
    qp = make_qp(np.eye(2), [1.0, -1.0], [1], [0.0])
    x = np.array([1.0, -0.5])
    rep = kkt_report(qp.S, qp.F, qp.constrained, qp.bounds, x, np.zeros(2))
    assert rep["primal"] == 0.5 and not kkt_ok(rep)
    res = pdas_solve(qp)
    assert isinstance(res, PdasResult)
    assert kkt_ok(kkt_report(qp.S, qp.F, qp.constrained, qp.bounds, res.x, res.m))
