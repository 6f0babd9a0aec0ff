import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etampc.qp import (ContractError, QpProblem, QpSettings, QpSolver, Status, check_kkt, primal_violation,
                       solve)
from oracles import cvxopt_qp, projected_gradient, random_box_qp


def box(P, q, lo, hi):
    n = len(q)
    return QpProblem(P, q, Ain=np.eye(n), lin=lo, uin=hi)


def test_interior_minimiser():
    sol = solve(box(np.array([[2.0]]), np.array([-2.0]), [0.0], [2.0]))
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-12)


def test_projection_onto_halfline():
    prob = QpProblem(np.array([[2.0]]), np.zeros(1), Ain=np.eye(1), lin=[1.0], uin=[np.inf])
    sol = solve(prob)
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-12)
    assert sol.active_set == ((0, -1),)
    # multiplier of an active lower bound is negative in the P x + q + A'y = 0 convention
    assert sol.y_in[0] == pytest.approx(-2.0)


def test_kkt_ignores_infinite_bounds():
    prob = QpProblem(np.eye(1), np.zeros(1), Ain=np.eye(1), lin=[-np.inf], uin=[1.0])
    rep = check_kkt(prob, [0.0])
    assert rep.max_residual == 0.0
    assert rep.y_in[0] == 0.0


def test_kkt_at_optimum_and_off_optimum():
    prob = box(np.array([[2.0]]), np.array([-2.0]), [0.0], [2.0])
    rep = check_kkt(prob, [1.0])
    assert rep.max_residual <= 1e-9
    rep = check_kkt(prob, [0.0])
    assert rep.stationarity == pytest.approx(2.0)


def test_equality_constrained():
    # min x1^2 + x2^2  s.t. x1 + x2 = 2  ->  (1, 1), y = -2
    prob = QpProblem(2 * np.eye(2), np.zeros(2), Aeq=[[1.0, 1.0]], beq=[2.0])
    sol = solve(prob)
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(sol.y_eq, [-2.0], atol=1e-10)


def test_infeasible_box_and_equality():
    prob = QpProblem(np.eye(2), np.zeros(2), Aeq=[[1.0, 1.0]], beq=[5.0], Ain=np.eye(2),
                     lin=[-1.0, -1.0], uin=[1.0, 1.0])
    assert solve(prob).status is Status.INFEASIBLE


def test_inconsistent_equalities_are_infeasible():
    prob = QpProblem(np.eye(2), np.zeros(2), Aeq=[[1.0, 1.0], [2.0, 2.0]], beq=[1.0, 3.0])
    assert solve(prob).status is Status.INFEASIBLE


def test_iteration_cap_is_a_status():
    rng = np.random.default_rng(3)
    P, q, lo, hi = random_box_qp(rng, 15)
    sol = solve(box(P, q, lo, hi), QpSettings(max_iterations=1))
    assert sol.status is Status.MAX_ITERATIONS


@pytest.mark.parametrize("kwargs, match", [
    (dict(P=[[1.0, 2.0], [0.0, 1.0]], q=[0, 0]), "symmetric"),
    (dict(P=np.eye(2), q=[0, 0, 0]), "q"),
    (dict(P=np.eye(2), q=[0, 0], Ain=np.eye(3)), "Ain"),
    (dict(P=np.eye(2), q=[0, 0], Ain=np.eye(2), lin=[1, 0], uin=[0, 0]), "lin"),
    (dict(P=np.eye(2), q=[np.nan, 0]), "non-finite"),
])
def test_contract_violations(kwargs, match):
    with pytest.raises(ContractError, match=match):
        QpProblem(**kwargs)


def test_settings_validation():
    with pytest.raises(ContractError):
        QpSettings(abs_tol=0.0)
    with pytest.raises(ContractError):
        QpSettings(max_iterations=0)


def test_not_positive_definite_on_nullspace():
    with pytest.raises(ContractError, match="positive definite"):
        QpSolver(np.diag([1.0, 0.0]))


def test_matches_projected_gradient_oracle():
    rng = np.random.default_rng(20240101)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        P, q, lo, hi = random_box_qp(rng, n)
        prob = box(P, q, lo, hi)
        ref = projected_gradient(P, q, lo, hi)
        sol = solve(prob)
        assert sol.status is Status.OPTIMAL
        worst = max(worst, float(np.abs(sol.x - ref).max()))
        assert check_kkt(prob, sol.x, sol.y_eq, sol.y_in).max_residual <= 1e-6
        # the oracle point itself passes the residual check
        assert check_kkt(prob, ref).max_residual <= 1e-6
    assert worst <= 1e-5


def _general_instance(rng, n, me, mi):
    M = rng.normal(size=(n, n))
    P = M.T @ M + 0.5 * np.eye(n)
    q = rng.normal(size=n)
    xf = rng.normal(size=n)
    Aeq = rng.normal(size=(me, n)) if me else None
    beq = Aeq @ xf if me else None
    Ain = rng.normal(size=(mi, n))
    ax = Ain @ xf
    lin = np.where(rng.random(mi) < 0.3, -np.inf, ax - rng.uniform(0, 1, mi))
    uin = np.where(rng.random(mi) < 0.3, np.inf, ax + rng.uniform(0, 1, mi))
    return QpProblem(P, q, Aeq, beq, Ain, lin, uin)


def test_matches_interior_point_reference_with_equalities():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(3, 16))
        prob = _general_instance(rng, n, int(rng.integers(0, n // 2)), int(rng.integers(1, 2 * n)))
        ref, status = cvxopt_qp(prob.P, prob.q, prob.Aeq if prob.Aeq.size else None, prob.beq,
                                prob.Ain, prob.lin, prob.uin)
        # cvxopt may stop at 'unknown' near its tolerance floor; its point must still be a KKT point
        assert status == "optimal" or check_kkt(prob, ref, active_tol=1e-7).max_residual <= 1e-6
        sol = solve(prob)
        assert sol.status is Status.OPTIMAL
        np.testing.assert_allclose(sol.x, ref, atol=1e-6)


def test_warm_start_reaches_same_optimum():
    rng = np.random.default_rng(11)
    prob = _general_instance(rng, 12, 3, 20)
    cold = solve(prob)
    for trial in range(10):
        seed = [(int(r), int(s)) for r, s in zip(rng.integers(0, 20, 5), rng.choice([-1, 1], 5))]
        warm = solve(prob, active_set=seed)
        np.testing.assert_allclose(warm.x, cold.x, atol=1e-9)


def test_deterministic_bit_identical():
    rng = np.random.default_rng(5)
    prob = _general_instance(rng, 10, 2, 15)
    a, b = solve(prob), solve(prob)
    assert a.iterations == b.iterations
    assert np.array_equal(a.x, b.x)
    assert a.dual_residual == b.dual_residual


def test_verified_feasible_point_prevents_infeasible_verdict():
    rng = np.random.default_rng(9)
    P, q, lo, hi = random_box_qp(rng, 6)
    prob = box(P, q, lo, hi)
    xf = 0.5 * (lo + hi)
    sol = solve(prob, QpSettings(max_iterations=1), feasible_point=xf)
    assert sol.status is not Status.INFEASIBLE
    assert primal_violation(prob, xf) == 0.0


def test_solver_reuse_matches_one_shot():
    rng = np.random.default_rng(13)
    prob = _general_instance(rng, 8, 2, 10)
    solver = QpSolver(prob.P, prob.Aeq, prob.Ain)
    for _ in range(5):
        q = rng.normal(size=8)
        a = solver.solve(q, prob.beq, prob.lin, prob.uin)
        b = solve(QpProblem(prob.P, q, prob.Aeq, prob.beq, prob.Ain, prob.lin, prob.uin))
        np.testing.assert_allclose(a.x, b.x, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(1e-3, 1e3))
def test_objective_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    prob = _general_instance(rng, int(rng.integers(2, 10)), int(rng.integers(0, 2)), int(rng.integers(1, 12)))
    a = solve(prob)
    b = solve(prob.scaled(c))
    assert a.status is Status.OPTIMAL and b.status is Status.OPTIMAL
    np.testing.assert_allclose(a.x, b.x, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_optimal_status_implies_small_residuals(seed):
    rng = np.random.default_rng(seed)
    prob = _general_instance(rng, int(rng.integers(2, 12)), int(rng.integers(0, 3)), int(rng.integers(1, 20)))
    sol = solve(prob)
    assert sol.status is Status.OPTIMAL
    assert sol.primal_residual <= 1e-6 * (1 + np.abs(prob.Ain @ sol.x).max())
    rep = check_kkt(prob, sol.x, sol.y_eq, sol.y_in)
    assert rep.max_residual <= 1e-6
