"""Planning layer: the long-horizon LCQP over a predicted headway band.

Decision vector layout (``m`` planning steps)::

    [s_0, v_0, s_1, v_1, ..., s_m, v_m | a_0 .. a_{m-1} | xi_1 .. xi_m | zeta_1 .. zeta_m]

``xi`` softens the minimum-headway envelope and ``zeta`` the maximum-headway
envelope; speeds and accelerations are hard boxes.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleState, discretize
from .envelope import EnvelopePair
from .prediction import OutOfDomainError
from .qp import ContractError, QpProblem, QpSettings, QpSolution, QpSolver, Status, primal_violation


class InfeasiblePlanError(RuntimeError):
    """The LCQP has no feasible point (e.g. initial speed outside the recoverable range)."""

    def __init__(self, message, solution: QpSolution | None = None):
        super().__init__(message)
        self.solution = solution


class DegradedPlanError(RuntimeError):
    """The solver stopped before certifying optimality."""

    def __init__(self, message, solution: QpSolution | None = None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class PlannerParams:
    alpha: float = 0.2
    beta: float = 0.7
    gamma: float = 0.1
    v_min: float = 0.0
    v_max: float = 35.0
    a_min: float = -1.5
    a_max: float = 3.0
    dt_p: float = 1.0
    m: int = 60

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if not math.isclose(self.alpha + self.beta + self.gamma, 1.0, abs_tol=1e-9):
            raise ContractError("alpha + beta + gamma must equal 1")
        _check_limits(self.v_min, self.v_max, self.a_min, self.a_max)
        if not self.dt_p > 0:
            raise ContractError("dt_p must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ContractError("m must be a positive integer")


def _check_limits(v_min, v_max, a_min, a_max):
    if not v_min < v_max:
        raise ContractError("v_min must be below v_max")
    if not a_min < 0 < a_max:
        raise ContractError("need a_min < 0 < a_max")


@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for a horizon of ``steps`` with optional max-headway slacks."""

    steps: int
    with_max: bool = True

    @property
    def n_states(self) -> int:
        return 2 * (self.steps + 1)

    @property
    def u(self) -> slice:
        return slice(self.n_states, self.n_states + self.steps)

    @property
    def xi(self) -> slice:
        start = self.n_states + self.steps
        return slice(start, start + self.steps)

    @property
    def zeta(self) -> slice:
        start = self.n_states + 2 * self.steps
        return slice(start, start + (self.steps if self.with_max else 0))

    @property
    def size(self) -> int:
        return self.n_states + (3 if self.with_max else 2) * self.steps

    def s_index(self, j):
        return 2 * np.asarray(j)

    def v_index(self, j):
        return 2 * np.asarray(j) + 1


@dataclass(frozen=True)
class LcqpMatrices:
    layout: Layout
    P: np.ndarray
    Aeq: np.ndarray
    Ain: np.ndarray
    rows: dict = field(default_factory=dict)  # block name -> slice of Ain rows


def lcqp_matrices(w_accel: float, w_min: float, w_max: float, dt: float, steps: int,
                  with_max: bool = True) -> LcqpMatrices:
    """Constant matrices of the horizon LCQP.

    Only the vectors (initial state, envelope samples, bounds) change between
    replans. ``w_max`` may be 0 here so that related problems can be compared
    block by block.
    """
    lay = Layout(steps, with_max)
    n = lay.size
    P = np.zeros((n, n))
    P[lay.u, lay.u] = 2.0 * w_accel * np.eye(steps)
    P[lay.xi, lay.xi] = 2.0 * w_min * np.eye(steps)
    if with_max:
        P[lay.zeta, lay.zeta] = 2.0 * w_max * np.eye(steps)

    zoh = discretize(dt)
    Aeq = np.zeros((lay.n_states, n))
    Aeq[0, 0] = Aeq[1, 1] = 1.0
    for i in range(steps):
        r = 2 + 2 * i
        Aeq[r:r + 2, 2 * (i + 1):2 * (i + 2)] = np.eye(2)
        Aeq[r:r + 2, 2 * i:2 * (i + 1)] = -zoh.Ad
        Aeq[r:r + 2, lay.u.start + i] = -zoh.Bd

    j = np.arange(1, steps + 1)
    blocks = []
    xi_nonneg = np.zeros((steps, n))
    xi_nonneg[np.arange(steps), lay.xi.start + np.arange(steps)] = 1.0
    blocks.append(("xi_nonneg", xi_nonneg))
    if with_max:
        zeta_nonneg = np.zeros((steps, n))
        zeta_nonneg[np.arange(steps), lay.zeta.start + np.arange(steps)] = 1.0
        blocks.append(("zeta_nonneg", zeta_nonneg))
    near = np.zeros((steps, n))  # s_j - xi_j <= s_min(t_j)
    near[np.arange(steps), lay.s_index(j)] = 1.0
    near[np.arange(steps), lay.xi.start + np.arange(steps)] = -1.0
    blocks.append(("min_headway", near))
    if with_max:
        far = np.zeros((steps, n))  # s_j + zeta_j >= s_max(t_j)
        far[np.arange(steps), lay.s_index(j)] = 1.0
        far[np.arange(steps), lay.zeta.start + np.arange(steps)] = 1.0
        blocks.append(("max_headway", far))
    speed = np.zeros((steps, n))
    speed[np.arange(steps), lay.v_index(j)] = 1.0
    blocks.append(("speed", speed))
    accel = np.zeros((steps, n))
    accel[np.arange(steps), lay.u.start + np.arange(steps)] = 1.0
    blocks.append(("accel", accel))

    rows, start = {}, 0
    for name, blk in blocks:
        rows[name] = slice(start, start + blk.shape[0])
        start += blk.shape[0]
    Ain = np.vstack([b for _, b in blocks])
    for arr in (P, Aeq, Ain):
        arr.setflags(write=False)
    return LcqpMatrices(lay, P, Aeq, Ain, rows)


@functools.lru_cache(maxsize=16)
def _planner_solver(params: PlannerParams, qp: QpSettings):
    mats = lcqp_matrices(params.alpha, params.beta, params.gamma, params.dt_p, params.m)
    return mats, QpSolver(mats.P, mats.Aeq, mats.Ain, qp)


def _grid(t0, params):
    return t0 + params.dt_p * np.arange(1, params.m + 1)


def _vectors(mats: LcqpMatrices, x0: VehicleState, s_min, s_max, params):
    steps = mats.layout.steps
    inf = np.full(steps, np.inf)
    zero = np.zeros(steps)
    lo, hi = [], []
    for name in mats.rows:
        if name in ("xi_nonneg", "zeta_nonneg"):
            lo.append(zero); hi.append(inf)
        elif name == "min_headway":
            lo.append(-inf); hi.append(np.asarray(s_min, dtype=float))
        elif name == "max_headway":
            lo.append(np.asarray(s_max, dtype=float)); hi.append(inf)
        elif name == "speed":
            lo.append(np.full(steps, params.v_min)); hi.append(np.full(steps, params.v_max))
        elif name == "accel":
            lo.append(np.full(steps, params.a_min)); hi.append(np.full(steps, params.a_max))
    beq = np.zeros(mats.Aeq.shape[0])
    beq[0], beq[1] = x0.s, x0.v
    return beq, np.concatenate(lo), np.concatenate(hi)


def _envelope_samples(env: EnvelopePair, t0, params):
    times = _grid(t0, params)
    if t0 < env.t_start - 1e-9:
        raise OutOfDomainError(f"envelope starts at {env.t_start}, plan starts at {t0}")
    return times, env.s_min(times), env.s_max(times)


def build_lcqp(x0: VehicleState, env: EnvelopePair, params: PlannerParams, t0: float) -> QpProblem:
    mats, _ = _planner_solver(params, QpSettings())
    _, s_min, s_max = _envelope_samples(env, t0, params)
    beq, lin, uin = _vectors(mats, x0, s_min, s_max, params)
    return QpProblem(mats.P, np.zeros(mats.layout.size), mats.Aeq, beq, mats.Ain, lin, uin)


@dataclass
class PlanResult:
    t0: float
    dt: float
    states: np.ndarray  # (m+1, 2): position, speed
    accels: np.ndarray  # (m,)
    slack_min: np.ndarray
    slack_max: np.ndarray
    objective: float
    solution: QpSolution  # decision vector in ego-relative positions

    @property
    def horizon_end(self) -> float:
        return self.t0 + self.dt * len(self.accels)

    def accel_at(self, t):
        """Planned acceleration at ``t`` (left-closed, piecewise constant)."""
        t = np.asarray(t, dtype=float)
        k = np.floor((t - self.t0) / self.dt + 1e-9).astype(int)
        if np.any(k < 0) or np.any(k >= len(self.accels)):
            raise OutOfDomainError(f"plan covers [{self.t0}, {self.horizon_end})")
        out = self.accels[k]
        return out if out.ndim else float(out)

    def velocity_at(self, t):
        """Planned speed at ``t`` under zero-order-hold accelerations."""
        t = np.asarray(t, dtype=float)
        k = np.floor((t - self.t0) / self.dt + 1e-9).astype(int)
        k = np.clip(k, 0, len(self.accels) - 1)
        tau = t - (self.t0 + k * self.dt)
        out = self.states[k, 1] + self.accels[k] * tau
        return out if out.ndim else float(out)


def unpack(mats: LcqpMatrices, sol: QpSolution, t0: float, dt: float) -> PlanResult:
    lay = mats.layout
    x = sol.x
    return PlanResult(
        t0=float(t0),
        dt=float(dt),
        states=x[:lay.n_states].reshape(-1, 2).copy(),
        accels=x[lay.u].copy(),
        slack_min=x[lay.xi].copy(),
        slack_max=x[lay.zeta].copy(),
        objective=sol.objective,
        solution=sol,
    )


def plan(x0: VehicleState, env: EnvelopePair, params: PlannerParams, t0: float,
         qp: QpSettings | None = None, active_set=None) -> PlanResult:
    """Solve the planning LCQP from ``x0`` at time ``t0``.

    Raises :class:`InfeasiblePlanError` if no plan satisfies the hard speed and
    acceleration limits, :class:`DegradedPlanError` if the solver gives up.
    """
    qp = qp or QpSettings()
    mats, solver = _planner_solver(params, qp)
    _, s_min, s_max = _envelope_samples(env, t0, params)
    # solve in coordinates centred on the ego position to keep tolerances meaningful
    origin = x0.s
    beq, lin, uin = _vectors(mats, VehicleState(0.0, x0.v), s_min - origin, s_max - origin, params)
    sol = solver.solve(np.zeros(mats.layout.size), beq, lin, uin, active_set=active_set)
    if sol.status is Status.INFEASIBLE:
        raise InfeasiblePlanError(f"planning LCQP infeasible at t={t0} from v={x0.v:.3f} m/s", sol)
    if sol.status is not Status.OPTIMAL:
        raise DegradedPlanError(f"planning LCQP not solved at t={t0}: {sol.status.value}", sol)
    result = unpack(mats, sol, t0, params.dt_p)
    result.states[:, 0] += origin
    return result


def zero_accel_candidate(x0: VehicleState, env: EnvelopePair, params: PlannerParams, t0: float) -> np.ndarray:
    """Coasting plan with slacks set to the envelope violations it incurs."""
    mats, _ = _planner_solver(params, QpSettings())
    lay = mats.layout
    times, s_min, s_max = _envelope_samples(env, t0, params)
    tau = times - t0
    x = np.zeros(lay.size)
    x[0], x[1] = x0.s, x0.v
    j = np.arange(1, params.m + 1)
    x[lay.s_index(j)] = x0.s + x0.v * tau
    x[lay.v_index(j)] = x0.v
    x[lay.xi] = np.maximum(0.0, x[lay.s_index(j)] - s_min)
    x[lay.zeta] = np.maximum(0.0, s_max - x[lay.s_index(j)])
    return x


def candidate_is_feasible(x0: VehicleState, env: EnvelopePair, params: PlannerParams, t0: float,
                          tol: float = 1e-9) -> bool:
    problem = build_lcqp(x0, env, params, t0)
    cand = zero_accel_candidate(x0, env, params, t0)
    scale = 1.0 + float(np.abs(cand).max())
    return primal_violation(problem, cand) <= tol * scale


def shift_active_set(active, steps: int, shift: int = 1):
    """Re-index a working set for a horizon that advanced by ``shift`` steps.

    Every block of constraint rows holds one row per step, so a constraint at
    step ``j`` becomes the one at step ``j - shift``; rows that fall off the
    front are dropped.
    """
    out = []
    for row, side in active:
        block, j = divmod(int(row), steps)
        if j >= shift:
            out.append((block * steps + j - shift, side))
    return out
