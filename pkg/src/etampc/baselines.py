"""Reference controllers: the intelligent driver model and the perfect-prediction oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleState
from .envelope import HeadwayParams, build_envelopes
from .planner import PlannerParams, PlanResult, plan, shift_active_set
from .prediction import LeadTrace, PredictedTrajectory
from .qp import ContractError, QpSettings


@dataclass(frozen=True)
class IdmParams:
    a_idm: float = 1.5
    b_idm: float = 3.0
    delta: float = 4.0
    s0: float = 3.5
    veh_len: float = 4.65
    v0: float = 35.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("a_idm", "b_idm", "delta", "s0", "veh_len", "v0", "T"):
            if not getattr(self, name) > 0:
                raise ContractError(f"IDM parameter {name} must be positive")
        if self.delta < 1:
            raise ContractError("IDM delta must be >= 1")


def idm_accel(ego: VehicleState, lead: VehicleState, p: IdmParams,
              a_bounds: tuple[float, float] = (-8.0, 3.0)) -> float:
    """IDM acceleration, clamped to ``a_bounds``; a closed gap returns the lower bound."""
    a_lo, a_hi = a_bounds
    gap = lead.s - ego.s - p.veh_len
    if gap <= 0:
        return a_lo
    v = max(ego.v, 0.0)
    dv = ego.v - lead.v
    s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a_idm * p.b_idm)))
    acc = p.a_idm * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)
    return float(min(max(acc, a_lo), a_hi))


def oracle_plan(trace: LeadTrace, params: PlannerParams, headway: HeadwayParams, x0: VehicleState,
                qp: QpSettings | None = None, n_plans: int | None = None) -> list[PlanResult]:
    """Receding-horizon planning pass with a perfect lead prediction.

    Each plan starts from the state the previous plan reaches after one
    planning step, so the sequence is open loop with respect to any tracker.
    ``n_plans`` defaults to one plan per planning step of the trace.
    """
    pred = PredictedTrajectory.from_trace(trace).with_history(
        *trace.history(float(trace.t[0]), headway.dt_plus + 1.0))
    env = build_envelopes(pred, headway)
    if n_plans is None:
        n_plans = int(math.floor(trace.duration / params.dt_p + 1e-9))
    plans = []
    x = x0
    warm = None
    for k in range(n_plans):
        t = float(trace.t[0]) + k * params.dt_p
        res = plan(x, env, params, t, qp, active_set=warm)
        plans.append(res)
        warm = shift_active_set(res.solution.active_set, params.m)
        x = VehicleState(float(res.states[1, 0]), float(res.states[1, 1]))
    return plans


def plan_velocities(plans: list[PlanResult], times) -> np.ndarray:
    """Speeds of the first step of each plan, evaluated at ``times`` (zero-order-hold accelerations)."""
    times = np.asarray(times, dtype=float)
    starts = np.array([p.t0 for p in plans])
    idx = np.clip(np.searchsorted(starts, times + 1e-9, side="right") - 1, 0, len(plans) - 1)
    out = np.empty(len(times))
    for i in np.unique(idx):
        sel = idx == i
        out[sel] = plans[i].velocity_at(times[sel])
    return out
