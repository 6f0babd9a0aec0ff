import inspect

import numpy as np
import pytest

from etampc.dynamics import VehicleState, rollout
from etampc.envelope import HeadwayParams, safety_envelope
from etampc.planner import InfeasiblePlanError, PlannerParams, lcqp_matrices, plan
from etampc.prediction import NoiseModel, OutOfDomainError, predict
from etampc.sim import synth_trace
from etampc.tracker import (TrackerParams, build_tracking_qp, reference_accels, track, tracker_matrices)
from etampc.qp import ContractError
from helpers import constant_lead_env
from oracles import cvxopt_qp

TP = TrackerParams()
HW = HeadwayParams()


def _step_plan():
    # planner result whose first step is 1.0 and second step 2.0, built by hand
    res = plan(VehicleState(-18.0, 10.0), constant_lead_env(10.0), PlannerParams(), 0.0)
    res.accels[:] = 2.0
    res.accels[0] = 1.0
    return res


def test_reference_resampling_examples():
    res = _step_plan()
    res.accels[:] = 0.0
    np.testing.assert_array_equal(reference_accels(res, 0.0, 0.1, 30), 0.0)
    ref = reference_accels(_step_plan(), 0.0, 0.1, 30)
    np.testing.assert_array_equal(ref[:10], 1.0)
    np.testing.assert_array_equal(ref[10:], 2.0)


def test_reference_mid_step_uses_containing_interval():
    res = _step_plan()
    ref = reference_accels(res, 0.55, 0.1, 30)
    direct = [res.accels[int(np.floor(0.55 + 0.1 * i + 1e-12))] for i in range(30)]
    np.testing.assert_array_equal(ref, direct)
    with pytest.raises(OutOfDomainError):
        reference_accels(res, 58.0, 0.1, 30)


def test_reference_achievable_gives_zero_cost():
    ref = np.zeros(30)
    res = track(VehicleState(0.0, 15.0), ref, VehicleState(200.0, 15.0), 0.0, TP, HW)
    np.testing.assert_allclose(res.accels, ref, atol=1e-9)
    np.testing.assert_allclose(res.slack_min, 0.0, atol=1e-9)
    assert res.objective == pytest.approx(0.0, abs=1e-9)


def test_benign_scenario_follows_nonzero_reference():
    ref = np.linspace(0.5, -0.5, 30)
    res = track(VehicleState(0.0, 15.0), ref, VehicleState(200.0, 15.0), 0.0, TP, HW)
    assert abs(res.command - ref[0]) <= 1e-6
    np.testing.assert_allclose(res.accels, ref, atol=1e-6)


def test_close_braking_lead_forces_braking():
    ego, lead = VehicleState(0.0, 15.0), VehicleState(6.0, 15.0)
    res = track(ego, np.zeros(30), lead, -3.0, TP, HW)
    assert res.command < 0
    prob = build_tracking_qp(ego, np.zeros(30), lead, -3.0, TP, HW)
    ref, _ = cvxopt_qp(prob.P, prob.q, prob.Aeq, prob.beq, prob.Ain, prob.lin, prob.uin)
    lay = tracker_matrices(TP).layout
    np.testing.assert_allclose(res.accels, ref[lay.u], atol=1e-5)
    np.testing.assert_allclose(res.slack_min, ref[lay.xi], atol=1e-5)


@pytest.mark.parametrize("seed", range(8))
def test_matches_interior_point_oracle(seed):
    rng = np.random.default_rng(seed)
    ego = VehicleState(0.0, rng.uniform(0, 35))
    lead = VehicleState(rng.uniform(5, 80), rng.uniform(0, 35))
    ref = rng.uniform(-1.5, 3.0, 30)
    a_lead = rng.uniform(-3, 2)
    prob = build_tracking_qp(ego, ref, lead, a_lead, TP, HW)
    x_ref, _ = cvxopt_qp(prob.P, prob.q, prob.Aeq, prob.beq, prob.Ain, prob.lin, prob.uin)
    res = track(ego, ref, lead, a_lead, TP, HW)
    lay = tracker_matrices(TP).layout
    np.testing.assert_allclose(res.accels, x_ref[lay.u], atol=1e-5)
    np.testing.assert_allclose(res.states, rollout(ego, res.accels, TP.dt_c), atol=1e-8)


def test_overspeed_is_infeasible():
    with pytest.raises(InfeasiblePlanError):
        track(VehicleState(0.0, 36.0), np.zeros(30), VehicleState(100.0, 30.0), 0.0, TP, HW)


def test_bad_inputs():
    with pytest.raises(ContractError):
        track(VehicleState(0.0, 10.0), np.zeros(29), VehicleState(50.0, 10.0), 0.0, TP, HW)
    with pytest.raises(ContractError):
        track(VehicleState(0.0, np.nan), np.zeros(30), VehicleState(50.0, 10.0), 0.0, TP, HW)
    with pytest.raises(ContractError):
        TrackerParams(lam=0.2)


def test_structure_is_planner_special_case():
    """Tracker matrices equal planner matrices with zero max weight and the max blocks deleted."""
    tm = tracker_matrices(TP)
    pm = lcqp_matrices(TP.lam, TP.mu, 0.0, TP.dt_c, TP.n, with_max=True)
    keep_cols = np.setdiff1d(np.arange(pm.layout.size), np.arange(pm.layout.size)[pm.layout.zeta])
    drop_rows = np.r_[np.arange(pm.Ain.shape[0])[pm.rows["zeta_nonneg"]],
                      np.arange(pm.Ain.shape[0])[pm.rows["max_headway"]]]
    keep_rows = np.setdiff1d(np.arange(pm.Ain.shape[0]), drop_rows)
    assert not pm.P[pm.layout.zeta].any()
    np.testing.assert_array_equal(tm.P, pm.P[np.ix_(keep_cols, keep_cols)])
    np.testing.assert_array_equal(tm.Aeq, pm.Aeq[:, keep_cols])
    np.testing.assert_array_equal(tm.Ain, pm.Ain[np.ix_(keep_rows, keep_cols)])
    # the deleted columns carry nothing but the deleted rows
    assert not pm.Ain[np.ix_(keep_rows, pm.layout.zeta.start + np.arange(TP.n))].any()


def test_min_headway_bound_is_the_safety_envelope():
    ego, lead = VehicleState(0.0, 20.0), VehicleState(30.0, 18.0)
    prob = build_tracking_qp(ego, np.zeros(30), lead, -1.0, TP, HW)
    env = safety_envelope(lead, -1.0, HW, 3.0)
    np.testing.assert_array_equal(prob.uin[30:60], env(0.1 * np.arange(1, 31)))


def test_noise_never_reaches_the_tracker():
    assert not {"noise", "sigma", "pred", "env"} & set(inspect.signature(track).parameters)
    trace = synth_trace("constant", {"v": 15.0}, 200.0)
    ego, lead = VehicleState(0.0, 16.0), VehicleState(25.0, 15.0)
    ref = np.full(30, 0.3)
    outputs = []
    for sigma in (0.0, 0.1, 0.25):
        # exercise the noisy path in between, so any hidden shared state would show up
        predict(trace, 0.0, 10.0, 3000.0, NoiseModel(sigma, 3), np.random.default_rng(3))
        res = track(ego, ref, lead, -0.5, TP, HW)
        outputs.append(res.solution.x.tobytes())
    assert len(set(outputs)) == 1
