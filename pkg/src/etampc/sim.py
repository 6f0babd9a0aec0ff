"""Closed-loop car-following simulation.

Prediction and planning run every ``plan_period`` seconds, tracking every
``track_period`` seconds; both vehicles are integrated with the same
zero-order-hold model the controllers use.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import IdmParams, idm_accel
from .dynamics import VehicleState, step
from .envelope import HeadwayParams, build_envelopes
from .planner import (DegradedPlanError, InfeasiblePlanError, PlannerParams, candidate_is_feasible, plan,
                      shift_active_set)
from .prediction import LeadTrace, NoiseModel, PredictedTrajectory, predict
from .qp import ContractError, QpSettings
from .tracker import TrackerParams, reference_accels, track

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("t", "s0", "v0", "a0", "s1", "v1", "a1", "s_min", "s_max",
                  "v_min", "v_max", "a_min", "a_max")
PLAN_COLUMNS = ("plan_id", "t", "solve_time", "iterations", "objective", "xi_norm", "zeta_norm",
                "status", "fallback", "candidate_feasible")


@dataclass(frozen=True)
class SimConfig:
    planner: PlannerParams = field(default_factory=PlannerParams)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    headway: HeadwayParams = field(default_factory=HeadwayParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    idm: IdmParams = field(default_factory=IdmParams)
    spacing: float = 10.0
    spatial_horizon: float = 3000.0
    plan_period: float = 1.0
    track_period: float = 0.1
    initial_gap: float = 30.0  # lead minus ego position at the start (m)
    initial_speed: float | None = None  # None: match the lead
    vehicle_length: float = 4.65
    plant_a_min: float = -8.0
    plant_a_max: float = 3.0
    prediction: str = "eta"  # "eta" or "oracle"
    verify_candidates: bool = False
    qp: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        if not math.isclose(self.plan_period, self.planner.dt_p):
            raise ContractError("plan_period must equal planner.dt_p")
        if not math.isclose(self.track_period, self.tracker.dt_c):
            raise ContractError("track_period must equal tracker.dt_c")
        ratio = self.plan_period / self.track_period
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ContractError("plan_period must be a whole multiple of track_period")
        if not self.spacing > 0:
            raise ContractError("spacing must be positive")
        if not self.spatial_horizon >= self.spacing:
            raise ContractError("spatial_horizon must be at least the spacing")
        if self.prediction not in ("eta", "oracle"):
            raise ContractError(f"unknown prediction mode {self.prediction!r}")
        if not self.initial_gap > self.vehicle_length:
            raise ContractError("initial_gap must exceed the vehicle length")

    def with_noise(self, spacing: float, sigma: float, seed: int) -> "SimConfig":
        return replace(self, spacing=spacing, noise=NoiseModel(sigma, seed))


@dataclass
class PlanEvent:
    plan_id: int
    t: float
    solve_time: float
    iterations: int
    objective: float
    xi_norm: float
    zeta_norm: float
    status: str
    fallback: bool
    candidate_feasible: bool | None = None


@dataclass
class SimRecord:
    columns: dict
    plan_id: np.ndarray
    plans: list
    track_solve_times: np.ndarray
    collision: bool = False
    events: list = field(default_factory=list)
    controller: str = "mpc"

    def __len__(self):
        return len(self.columns["t"])

    def __getattr__(self, name):
        cols = self.__dict__.get("columns")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)

    @property
    def gap(self) -> np.ndarray:
        """Front-to-front distance between the vehicles at each tick."""
        return self.columns["s0"] - self.columns["s1"]

    def min_bumper_gap(self, vehicle_length: float) -> float:
        return float(np.min(self.gap - vehicle_length))

    @property
    def fallback_count(self) -> int:
        return sum(1 for p in self.plans if p.fallback)

    def mean_plan_time(self) -> float:
        times = [p.solve_time for p in self.plans if not math.isnan(p.solve_time)]
        return float(np.mean(times)) if times else float("nan")

    def mean_track_time(self) -> float:
        return float(np.mean(self.track_solve_times)) if len(self.track_solve_times) else float("nan")

    def write_csv(self, path) -> None:
        arr = np.column_stack([self.columns[c] for c in RECORD_COLUMNS])
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for row in arr:
                w.writerow([_fmt(x) for x in row])

    def write_plan_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PLAN_COLUMNS)
            for p in self.plans:
                w.writerow([_fmt(getattr(p, c)) for c in PLAN_COLUMNS])


def _fmt(x):
    if isinstance(x, bool) or x is None:
        return "" if x is None else int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, str):
        return x
    return f"{float(x):.10g}"


def _initial_states(config: SimConfig, trace: LeadTrace):
    lead = trace.state_at(float(trace.t[0]))
    v = lead.v if config.initial_speed is None else config.initial_speed
    return lead, VehicleState(lead.s - config.initial_gap, v)


def _tick_count(trace: LeadTrace, dt: float) -> int:
    return int(math.floor(trace.duration / dt + 1e-9))


def _empty_columns(n):
    return {c: np.full(n, np.nan) for c in RECORD_COLUMNS}


def _finalize(cols, k):
    return {c: v[:k].copy() for c, v in cols.items()}


def run(config: SimConfig, trace: LeadTrace) -> SimRecord:
    """Closed-loop run of the hierarchical MPC against a replayed lead trace."""
    dt_c = config.track_period
    ratio = int(round(config.plan_period / dt_c))
    P, T, H = config.planner, config.tracker, config.headway
    ticks = _tick_count(trace, dt_c)
    # the prediction layer may look past the end of the trip: continue at the final speed
    lookahead = trace.extended(config.spatial_horizon + config.spacing)
    span = H.dt_plus + 1.0
    oracle_pred = None
    if config.prediction == "oracle":
        oracle_pred = PredictedTrajectory.from_trace(lookahead).with_history(*trace.history(trace.t[0], span))
    rng = config.noise.generator()

    _, ego = _initial_states(config, trace)
    cols = _empty_columns(ticks)
    plan_ids = np.full(ticks, -1, dtype=int)
    track_times = np.empty(ticks)
    plans: list[PlanEvent] = []
    events: list[str] = []
    current = None
    current_id = -1
    env = None
    plan_warm = None
    track_warm = None
    collision = False
    t0 = float(trace.t[0])
    k = 0
    for k in range(ticks):
        t = t0 + k * dt_c
        lead = trace.state_at(t)
        a_lead = trace.accel_at(t)
        if lead.s - ego.s - config.vehicle_length <= 0:
            collision = True
            events.append(f"collision at t={t:.1f}")
            log.warning("collision at t=%.1f", t)
            break

        if k % ratio == 0:
            if oracle_pred is not None:
                pred = oracle_pred
            else:
                # observed lead history feeds the time-shifted envelope terms
                pred = predict(lookahead, t, config.spacing, config.spatial_horizon, config.noise,
                               rng).with_history(*trace.history(t, span))
            env = build_envelopes(pred, H)
            pid = len(plans)
            cand = candidate_is_feasible(ego, env, P, t) if config.verify_candidates else None
            try:
                current = plan(ego, env, P, t, config.qp, active_set=plan_warm)
                sol = current.solution
                plan_warm = shift_active_set(sol.active_set, P.m)
                plans.append(PlanEvent(pid, t, sol.solve_time, sol.iterations, current.objective,
                                       float(np.linalg.norm(current.slack_min)),
                                       float(np.linalg.norm(current.slack_max)),
                                       sol.status.value, False, cand))
                current_id = pid
            except (InfeasiblePlanError, DegradedPlanError) as exc:
                sol = exc.solution
                plans.append(PlanEvent(pid, t, sol.solve_time if sol else float("nan"),
                                       sol.iterations if sol else 0, float("nan"), float("nan"),
                                       float("nan"), sol.status.value if sol else "error", True, cand))
                events.append(f"planner fallback at t={t:.1f}: {exc}")
                log.info("planner fallback at t=%.1f: %s", t, exc)
                plan_warm = None
                # keep following the previous plan while it still covers the tracking horizon
                if current is None or current.horizon_end < t + T.n * dt_c - 1e-9:
                    current = None
                    current_id = -1

        if current is not None:
            ref = reference_accels(current, t, dt_c, T.n)
        else:
            ref = np.full(T.n, max(T.a_min, -ego.v / dt_c))
        try:
            res = track(ego, ref, lead, a_lead, T, H, config.qp, active_set=track_warm)
            cmd = res.command
            track_times[k] = res.solution.solve_time
            track_warm = shift_active_set(res.solution.active_set, T.n)
        except (InfeasiblePlanError, DegradedPlanError) as exc:
            cmd = min(max(-ego.v / dt_c, T.a_min), T.a_max) if ego.v > T.v_min else 0.0
            if ego.v > T.v_max:
                cmd = T.a_min
            track_times[k] = exc.solution.solve_time if exc.solution else float("nan")
            track_warm = None
            events.append(f"tracker fallback at t={t:.1f}: {exc}")

        cols["t"][k] = t
        cols["s0"][k], cols["v0"][k], cols["a0"][k] = lead.s, lead.v, a_lead
        cols["s1"][k], cols["v1"][k], cols["a1"][k] = ego.s, ego.v, cmd
        if env is not None:
            cols["s_min"][k] = env.s_min(t)
            cols["s_max"][k] = env.s_max(t)
        cols["v_min"][k], cols["v_max"][k] = T.v_min, T.v_max
        cols["a_min"][k], cols["a_max"][k] = T.a_min, T.a_max
        plan_ids[k] = current_id if current is not None else -1
        ego = step(ego, cmd, dt_c)
    n = k if collision else ticks
    return SimRecord(_finalize(cols, n), plan_ids[:n].copy(), plans, track_times[:n].copy(),
                     collision, events, "oracle" if config.prediction == "oracle" else "mpc")


def run_idm(config: SimConfig, trace: LeadTrace) -> SimRecord:
    """Closed-loop run of the IDM baseline with the same plant and tick rate."""
    dt_c = config.track_period
    ticks = _tick_count(trace, dt_c)
    _, ego = _initial_states(config, trace)
    cols = _empty_columns(ticks)
    bounds = (config.plant_a_min, config.plant_a_max)
    idm = replace(config.idm, veh_len=config.vehicle_length)
    t0 = float(trace.t[0])
    collision = False
    n = ticks
    for k in range(ticks):
        t = t0 + k * dt_c
        lead = trace.state_at(t)
        if lead.s - ego.s - config.vehicle_length <= 0:
            collision = True
            n = k
            break
        cmd = idm_accel(ego, lead, idm, bounds)
        cols["t"][k] = t
        cols["s0"][k], cols["v0"][k], cols["a0"][k] = lead.s, lead.v, trace.accel_at(t)
        cols["s1"][k], cols["v1"][k], cols["a1"][k] = ego.s, ego.v, cmd
        cols["v_min"][k], cols["v_max"][k] = 0.0, config.idm.v0
        cols["a_min"][k], cols["a_max"][k] = bounds
        ego = step(ego, cmd, dt_c)
    return SimRecord(_finalize(cols, n), np.full(n, -1), [], np.zeros(0), collision,
                     ["collision"] if collision else [], "idm")


def replay(record: SimRecord, dt: float) -> np.ndarray:
    """Ego states re-integrated from the recorded commands, starting at the first row."""
    out = np.empty((len(record), 2))
    x = VehicleState(float(record.s1[0]), float(record.v1[0]))
    for k in range(len(record)):
        out[k] = x.s, x.v
        x = step(x, float(record.a1[k]), dt)
    return out


# ---------------------------------------------------------------- synthetic traces


def _integrate(accels, v0, s0, dt):
    """Sample a ZOH trajectory; accelerations are trimmed so speed never goes negative."""
    n = len(accels)
    t = dt * np.arange(n + 1)
    s = np.empty(n + 1)
    v = np.empty(n + 1)
    a = np.append(np.asarray(accels, dtype=float), 0.0)
    s[0], v[0] = s0, v0
    for k in range(n):
        if v[k] + a[k] * dt < 0:
            a[k] = -v[k] / dt
        s[k + 1] = s[k] + v[k] * dt + 0.5 * a[k] * dt * dt
        v[k + 1] = v[k] + a[k] * dt
    v = np.maximum(v, 0.0)
    return LeadTrace(t, s, v, a)


def _ramp(v_from, v_to, rate, dt):
    """Accelerations moving the speed from v_from to v_to at |rate|, ending exactly on v_to."""
    dv = v_to - v_from
    if dv == 0:
        return []
    steps = int(math.floor(abs(dv) / (rate * dt) + 1e-9))
    acc = [math.copysign(rate, dv)] * steps
    rest = dv - math.copysign(rate, dv) * dt * steps
    if abs(rest) > 1e-12:
        acc.append(rest / dt)
    return acc


def synth_trace(kind: str, params: dict | None = None, duration: float = 700.0, seed: int = 0,
                dt: float = 0.1) -> LeadTrace:
    """Deterministic synthetic lead traces.

    ``constant``: ``v`` (default 20 m/s). ``sawtooth``: between ``v_low`` and
    ``v_high`` at acceleration magnitude ``accel``, starting at ``v_low``.
    ``stop_and_go``: random waves between a low phase and a high phase, with
    seeded amplitudes, rates and dwell times. ``stop_prob`` is the chance that
    a low phase is a full stop (0 by default).
    """
    params = dict(params or {})
    if not duration > 0:
        raise ContractError("duration must be positive")
    n = int(round(duration / dt))
    s0 = float(params.pop("s0", 0.0))
    if kind == "constant":
        v = float(params.pop("v", 20.0))
        _reject_extra(params)
        if not 0 <= v <= 35:
            raise ContractError("constant speed must lie in [0, 35]")
        return _integrate(np.zeros(n), v, s0, dt)
    if kind == "sawtooth":
        v_low = float(params.pop("v_low", 5.0))
        v_high = float(params.pop("v_high", 25.0))
        rate = float(params.pop("accel", 1.0))
        _reject_extra(params)
        if not (0 <= v_low < v_high <= 35 and 0 < rate <= 3):
            raise ContractError("sawtooth needs 0 <= v_low < v_high <= 35 and 0 < accel <= 3")
        cycle = _ramp(v_low, v_high, rate, dt) + _ramp(v_high, v_low, rate, dt)
        acc = (cycle * (n // len(cycle) + 1))[:n]
        return _integrate(np.array(acc), v_low, s0, dt)
    if kind == "stop_and_go":
        v_cruise = float(params.pop("v_cruise", 25.0))
        high = params.pop("v_high", (20.0, 28.0))
        low = params.pop("v_low", (8.0, 15.0))
        stop_prob = float(params.pop("stop_prob", 0.0))
        acc_rng = params.pop("accel", (0.3, 0.8))
        dec_rng = params.pop("decel", (0.3, 0.8))
        dwell = params.pop("dwell", (5.0, 25.0))
        _reject_extra(params)
        if not (0 <= low[0] <= low[1] < high[0] <= high[1] <= 35):
            raise ContractError("stop_and_go speed ranges must satisfy 0 <= v_low < v_high <= 35")
        if not (0 < acc_rng[0] <= acc_rng[1] <= 3 and 0 < dec_rng[0] <= dec_rng[1] <= 3):
            raise ContractError("stop_and_go rates must lie in (0, 3]")
        rng = np.random.default_rng(seed)
        acc: list[float] = []
        v = v_cruise
        acc += [0.0] * int(rng.uniform(*dwell) / dt)
        while len(acc) < n:
            target = 0.0 if rng.random() < stop_prob else rng.uniform(*low)
            acc += _ramp(v, target, rng.uniform(*dec_rng), dt)
            acc += [0.0] * int(rng.uniform(*dwell) / dt * (0.5 if target > 0 else 1.0))
            v = target
            target = rng.uniform(*high)
            acc += _ramp(v, target, rng.uniform(*acc_rng), dt)
            acc += [0.0] * int(rng.uniform(*dwell) / dt)
            v = target
        return _integrate(np.array(acc[:n]), v_cruise, s0, dt)
    raise ContractError(f"unknown trace kind {kind!r}")


def _reject_extra(params):
    if params:
        raise ContractError(f"unexpected trace parameters: {sorted(params)}")
