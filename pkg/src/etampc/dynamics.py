"""Double-integrator kinematics with zero-order-hold acceleration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qp import ContractError


@dataclass(frozen=True)
class VehicleState:
    s: float  # position (m)
    v: float  # speed (m/s)

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.v])


@dataclass(frozen=True)
class ZohPair:
    Ad: np.ndarray
    Bd: np.ndarray
    dt: float


def _check_dt(dt):
    if not math.isfinite(dt) or dt < 0:
        raise ContractError(f"dt must be finite and non-negative, got {dt}")


def discretize(dt: float) -> ZohPair:
    """Exact discretization of ``s'' = a`` over a step of ``dt`` seconds.

    ``A`` is nilpotent, so ``exp(A dt) = I + A dt`` and the input integral is
    ``[dt^2/2, dt]``.
    """
    _check_dt(dt)
    Ad = np.array([[1.0, dt], [0.0, 1.0]])
    Bd = np.array([0.5 * dt * dt, dt])
    return ZohPair(Ad, Bd, float(dt))


def step(x: VehicleState, a: float, dt: float) -> VehicleState:
    _check_dt(dt)
    if not (math.isfinite(x.s) and math.isfinite(x.v) and math.isfinite(a)):
        raise ContractError("non-finite state or acceleration")
    return VehicleState(x.s + x.v * dt + 0.5 * a * dt * dt, x.v + a * dt)


def rollout(x0: VehicleState, accels, dt: float) -> np.ndarray:
    """States ``(len(accels)+1, 2)`` reached by applying ``accels`` in sequence."""
    out = np.empty((len(accels) + 1, 2))
    x = x0
    out[0] = x.s, x.v
    for i, a in enumerate(accels):
        x = step(x, float(a), dt)
        out[i + 1] = x.s, x.v
    return out
