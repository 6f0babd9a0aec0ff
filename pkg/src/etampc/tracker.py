"""Tracking layer: follow the planned accelerations at a fine time step while
keeping behind a constant-acceleration extrapolation of the measured lead.

Only RADAR-type inputs (current lead state and acceleration) enter the
problem; the ETA-based prediction never does.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleState, discretize
from .envelope import HeadwayParams, safety_envelope
from .planner import DegradedPlanError, InfeasiblePlanError, Layout, PlanResult, _check_limits
from .qp import ContractError, QpProblem, QpSettings, QpSolution, QpSolver, Status


@dataclass(frozen=True)
class TrackerParams:
    lam: float = 0.1
    mu: float = 0.9
    v_min: float = 0.0
    v_max: float = 35.0
    a_min: float = -1.5
    a_max: float = 3.0
    dt_c: float = 0.1
    n: int = 30

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ContractError("lam and mu must be positive")
        if not math.isclose(self.lam + self.mu, 1.0, abs_tol=1e-9):
            raise ContractError("lam + mu must equal 1")
        _check_limits(self.v_min, self.v_max, self.a_min, self.a_max)
        if not self.dt_c > 0:
            raise ContractError("dt_c must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ContractError("n must be a positive integer")


@dataclass
class TrackResult:
    states: np.ndarray  # (n+1, 2)
    accels: np.ndarray  # (n,)
    slack_min: np.ndarray
    objective: float
    solution: QpSolution

    @property
    def command(self) -> float:
        return float(self.accels[0])


@dataclass(frozen=True)
class TrackerMatrices:
    layout: Layout
    P: np.ndarray
    Aeq: np.ndarray
    Ain: np.ndarray


@functools.lru_cache(maxsize=16)
def tracker_matrices(params: TrackerParams) -> TrackerMatrices:
    """Rows of ``Ain``: xi >= 0, s_j - xi_j <= s~min(t_j), speed box, accel box."""
    n = params.n
    lay = Layout(n, with_max=False)
    size = lay.size
    idx = np.arange(n)
    P = np.zeros((size, size))
    P[lay.u, lay.u] = 2.0 * params.lam * np.eye(n)
    P[lay.xi, lay.xi] = 2.0 * params.mu * np.eye(n)

    zoh = discretize(params.dt_c)
    Aeq = np.zeros((lay.n_states, size))
    Aeq[0, 0] = Aeq[1, 1] = 1.0
    for i in range(n):
        r = 2 + 2 * i
        Aeq[r:r + 2, 2 * i + 2:2 * i + 4] = np.eye(2)
        Aeq[r:r + 2, 2 * i:2 * i + 2] = -zoh.Ad
        Aeq[r:r + 2, lay.u.start + i] = -zoh.Bd

    Ain = np.zeros((4 * n, size))
    Ain[idx, lay.xi.start + idx] = 1.0
    Ain[n + idx, 2 * (idx + 1)] = 1.0
    Ain[n + idx, lay.xi.start + idx] = -1.0
    Ain[2 * n + idx, 2 * (idx + 1) + 1] = 1.0
    Ain[3 * n + idx, lay.u.start + idx] = 1.0
    for arr in (P, Aeq, Ain):
        arr.setflags(write=False)
    return TrackerMatrices(lay, P, Aeq, Ain)


@functools.lru_cache(maxsize=16)
def _tracker_solver(params: TrackerParams, qp: QpSettings):
    mats = tracker_matrices(params)
    return QpSolver(mats.P, mats.Aeq, mats.Ain, qp)


def reference_accels(plan: PlanResult, t0: float, dt_c: float, n: int) -> np.ndarray:
    """Zero-order-hold resampling of the plan onto ``t0 + i*dt_c``, ``i < n``."""
    return np.asarray(plan.accel_at(t0 + dt_c * np.arange(n)), dtype=float)


def build_tracking_qp(x0: VehicleState, ref, lead_now: VehicleState, a_lead: float,
                      params: TrackerParams, headway: HeadwayParams) -> QpProblem:
    mats = tracker_matrices(params)
    q, beq, lin, uin = _vectors(mats, x0, ref, lead_now, a_lead, params, headway)
    return QpProblem(mats.P, q, mats.Aeq, beq, mats.Ain, lin, uin)


def _vectors(mats, x0, ref, lead_now, a_lead, params, headway):
    n = params.n
    ref = np.asarray(ref, dtype=float)
    if ref.shape != (n,):
        raise ContractError(f"reference must have {n} entries, got {ref.shape}")
    if not (np.all(np.isfinite(ref)) and math.isfinite(x0.s) and math.isfinite(x0.v)):
        raise ContractError("non-finite tracker input")
    lay = mats.layout
    q = np.zeros(lay.size)
    q[lay.u] = -2.0 * params.lam * ref
    beq = np.zeros(lay.n_states)
    beq[0], beq[1] = x0.s, x0.v
    horizon = n * params.dt_c
    env = safety_envelope(lead_now, a_lead, headway, horizon)
    s_tilde = env(params.dt_c * np.arange(1, n + 1))
    inf = np.full(n, np.inf)
    lin = np.concatenate([np.zeros(n), -inf, np.full(n, params.v_min), np.full(n, params.a_min)])
    uin = np.concatenate([inf, s_tilde, np.full(n, params.v_max), np.full(n, params.a_max)])
    return q, beq, lin, uin


def track(x0: VehicleState, ref, lead_now: VehicleState, a_lead: float, params: TrackerParams,
          headway: HeadwayParams, qp: QpSettings | None = None, active_set=None) -> TrackResult:
    """Solve the tracking LCQP; positions are relative to any common origin.

    The command to apply is ``result.command`` (the first acceleration).
    """
    qp = qp or QpSettings()
    mats = tracker_matrices(params)
    solver = _tracker_solver(params, qp)
    origin = x0.s
    q, beq, lin, uin = _vectors(mats, VehicleState(0.0, x0.v), ref,
                                VehicleState(lead_now.s - origin, lead_now.v), a_lead, params, headway)
    sol = solver.solve(q, beq, lin, uin, active_set=active_set)
    if sol.status is Status.INFEASIBLE:
        raise InfeasiblePlanError(f"tracking LCQP infeasible from v={x0.v:.3f} m/s", sol)
    if sol.status is not Status.OPTIMAL:
        raise DegradedPlanError(f"tracking LCQP not solved: {sol.status.value}", sol)
    lay = mats.layout
    x = sol.x
    ref = np.asarray(ref, dtype=float)
    states = x[:lay.n_states].reshape(-1, 2).copy()
    states[:, 0] += origin
    return TrackResult(
        states=states,
        accels=x[lay.u].copy(),
        slack_min=x[lay.xi].copy(),
        objective=sol.objective + params.lam * float(ref @ ref),
        solution=sol,
    )
