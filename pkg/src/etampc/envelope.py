"""Headway envelopes around a predicted lead trajectory.

``s_min`` is the position the follower should stay behind (minimum headway),
``s_max`` the position it should stay ahead of (maximum headway). Each is a
composition of a space-headway offset and a time-shifted copy of the lead
trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import VehicleState
from .prediction import OutOfDomainError, PredictedTrajectory
from .qp import ContractError


@dataclass(frozen=True)
class HeadwayParams:
    ds_minus: float = 5.0
    ds_plus: float = 100.0
    dt_minus: float = 0.6
    dt_plus: float = 3.0

    def __post_init__(self):
        if not (0 < self.ds_minus < self.ds_plus):
            raise ContractError("headway params need 0 < ds_minus < ds_plus")
        if not (0 < self.dt_minus < self.dt_plus):
            raise ContractError("headway params need 0 < dt_minus < dt_plus")


def min_headway_position(lead_now, lead_shifted, p: HeadwayParams):
    """max(min(lead - ds-, lead(t - dt-)), lead - ds+), elementwise."""
    return np.maximum(np.minimum(lead_now - p.ds_minus, lead_shifted), lead_now - p.ds_plus)


def max_headway_position(lead_now, lead_shifted, p: HeadwayParams):
    """min(max(lead - ds+, lead(t - dt+)), lead - ds-), elementwise."""
    return np.minimum(np.maximum(lead_now - p.ds_plus, lead_shifted), lead_now - p.ds_minus)


@dataclass(frozen=True)
class EnvelopePair:
    pred: PredictedTrajectory
    params: HeadwayParams

    @property
    def t_start(self) -> float:
        return self.pred.t_start

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.pred.t_start - 1e-9):
            raise OutOfDomainError(f"envelope queried before t={self.pred.t_start}")
        return t

    def s_min(self, t):
        t = self._check(t)
        return min_headway_position(self.pred(t), self.pred.clamped(t - self.params.dt_minus), self.params)

    def s_max(self, t):
        t = self._check(t)
        return max_headway_position(self.pred(t), self.pred.clamped(t - self.params.dt_plus), self.params)

    def h_min(self, t):
        return self.pred(t) - self.s_min(t)

    def h_max(self, t):
        return self.pred(t) - self.s_max(t)


def build_envelopes(pred: PredictedTrajectory, params: HeadwayParams) -> EnvelopePair:
    return EnvelopePair(pred, params)


def constant_accel_position(x0: VehicleState, a: float, tau):
    """Position after ``tau`` seconds (negative = past) at constant ``a``; speed never drops below 0."""
    tau = np.asarray(tau, dtype=float)
    v0 = x0.v
    if a == 0.0 or v0 < 0:
        return x0.s + max(v0, 0.0) * tau
    # speed v0 + a*tau hits zero at tau_stop; the vehicle rests on the far side of it
    tau_stop = -v0 / a
    tau_eff = np.minimum(tau, tau_stop) if a < 0 else np.maximum(tau, tau_stop)
    return x0.s + v0 * tau_eff + 0.5 * a * tau_eff * tau_eff


def safety_envelope(x0_lead: VehicleState, a_lead: float, params: HeadwayParams, horizon: float,
                    t0: float = 0.0) -> Callable:
    """Minimum-headway envelope assuming the lead keeps accelerating at ``a_lead``.

    Returns ``f(t)`` valid on ``[t0, t0 + horizon]``. The maximum-headway side
    is deliberately absent.
    """
    if not horizon > 0:
        raise ContractError("horizon must be positive")
    if not all(math.isfinite(x) for x in (x0_lead.s, x0_lead.v, a_lead, t0)):
        raise ContractError("non-finite lead state")

    def s_min(t):
        tau = np.asarray(t, dtype=float) - t0
        if np.any(tau < -1e-9) or np.any(tau > horizon + 1e-9):
            raise OutOfDomainError(f"safety envelope valid on [{t0}, {t0 + horizon}]")
        now = constant_accel_position(x0_lead, a_lead, tau)
        shifted = constant_accel_position(x0_lead, a_lead, tau - params.dt_minus)
        return min_headway_position(now, shifted, params)

    return s_min
