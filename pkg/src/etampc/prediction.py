"""ETA-based prediction of the preceding vehicle.

Waypoints are laid out ahead of the lead vehicle, the lead's arrival time at
each waypoint is read off its trace, the arrival-time gaps are corrupted with
a uniform relative error, and the noisy arrival times are interpolated back
into a position-vs-time prediction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import VehicleState
from .qp import ContractError


class OutOfDomainError(ValueError):
    """A query fell outside the time range where a trajectory is defined."""


class HorizonExceedsTraceError(ValueError):
    """A waypoint lies beyond the positions covered by a lead trace."""


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LeadTrace:
    """Sampled lead-vehicle trajectory; ``a[k]`` holds over ``[t[k], t[k+1])``."""

    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(x, dtype=float).reshape(-1) for x in (self.t, self.s, self.v, self.a)]
        if len({len(x) for x in arrays}) != 1 or len(arrays[0]) < 2:
            raise ContractError("trace columns must have equal length >= 2")
        t, s, v, a = arrays
        if not all(np.all(np.isfinite(x)) for x in arrays):
            raise ContractError("trace contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ContractError("trace times must be strictly increasing")
        if np.any(np.diff(s) < -1e-9):
            raise ContractError("trace positions must be nondecreasing")
        if np.any(v < -1e-9):
            raise ContractError("trace speeds must be non-negative")
        for name, arr in zip("tsva", (t, s, v, a)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def _left(self, t):
        return np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1)

    def state_at(self, t: float) -> VehicleState:
        return VehicleState(float(np.interp(t, self.t, self.s)), float(np.interp(t, self.t, self.v)))

    def accel_at(self, t: float) -> float:
        return float(self.a[self._left(t + 1e-9)])

    def since(self, t0: float) -> "LeadTrace":
        """The part of the trace from ``t0`` on, starting with an interpolated sample."""
        k = int(np.searchsorted(self.t, t0, side="right"))
        if k >= len(self.t):
            raise OutOfDomainError(f"t0={t0} is past the end of the trace")
        st = self.state_at(t0)
        if k > 0 and abs(self.t[k - 1] - t0) < 1e-12:
            k -= 1
            head_t, head_s, head_v, head_a = [], [], [], []
        else:
            head_t, head_s, head_v, head_a = [t0], [st.s], [st.v], [self.accel_at(t0)]
        return LeadTrace(
            np.concatenate([head_t, self.t[k:]]),
            np.concatenate([head_s, self.s[k:]]),
            np.concatenate([head_v, self.v[k:]]),
            np.concatenate([head_a, self.a[k:]]),
        )

    def history(self, t: float, span: float) -> tuple[np.ndarray, np.ndarray]:
        """Samples in ``[t - span, t)``.

        Before the trace starts the lead is assumed to have driven at its
        initial speed, so one extrapolated knot is prepended when the window
        reaches back past the first sample.
        """
        past = (self.t >= t - span) & (self.t < t)
        times, pos = self.t[past], self.s[past]
        t_back = t - span
        if t_back < self.t[0]:
            back = self.s[0] - self.v[0] * (self.t[0] - t_back)
            times, pos = np.r_[t_back, times], np.r_[back, pos]
        return times, pos

    def extended(self, distance: float) -> "LeadTrace":
        """Append a constant-speed continuation covering ``distance`` more metres.

        A trace that ends at standstill is returned unchanged.
        """
        v_end = float(self.v[-1])
        if v_end <= 1e-9 or distance <= 0:
            return self
        dt = distance / v_end
        return LeadTrace(
            np.append(self.t, self.t[-1] + dt),
            np.append(self.s, self.s[-1] + distance),
            np.append(self.v, v_end),
            np.append(self.a[:-1], [0.0, 0.0]),
        )


def read_trace_csv(path) -> LeadTrace:
    """Read a ``t,s,v,a`` CSV (SI units, one sample per row)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace not found: {path}")
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "s", "v", "a"]:
            raise TraceFormatError(f"{path}:1: expected header 't,s,v,a', got {header!r}")
        prev_t = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TraceFormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(x) for x in vals):
                raise TraceFormatError(f"{path}:{lineno}: non-finite value")
            if vals[0] <= prev_t:
                raise TraceFormatError(f"{path}:{lineno}: time {vals[0]} is not after {prev_t}")
            prev_t = vals[0]
            rows.append(vals)
    if len(rows) < 2:
        raise TraceFormatError(f"{path}: need at least two samples")
    arr = np.array(rows)
    try:
        return LeadTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    except ContractError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None


def write_trace_csv(trace: LeadTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s", "v", "a"])
        for row in zip(trace.t, trace.s, trace.v, trace.a):
            w.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class WaypointGrid:
    waypoints: np.ndarray
    spacing: float

    def __len__(self):
        return len(self.waypoints)

    def truncated(self, max_position: float) -> "WaypointGrid":
        """Drop waypoints beyond ``max_position``; the first one is always kept."""
        keep = max(1, int(np.searchsorted(self.waypoints, max_position + 1e-9, side="right")))
        return WaypointGrid(self.waypoints[:keep], self.spacing)


@dataclass(frozen=True)
class EtaSequence:
    times: np.ndarray

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.sigma < 1.0):
            raise ContractError(f"sigma must lie in [0, 1), got {self.sigma}")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def make_waypoints(lead_position: float, spacing: float, horizon: float) -> WaypointGrid:
    if not spacing > 0:
        raise ContractError(f"waypoint spacing must be positive, got {spacing}")
    if not horizon >= spacing:
        raise ContractError(f"horizon ({horizon}) must be at least the spacing ({spacing})")
    count = int(math.floor(horizon / spacing + 1e-9)) + 1
    return WaypointGrid(lead_position + spacing * np.arange(count), float(spacing))


def true_arrival_times(trace: LeadTrace, grid: WaypointGrid) -> EtaSequence:
    """Earliest time the trace position reaches each waypoint (linear inverse interpolation)."""
    w = grid.waypoints
    s, t = trace.s, trace.t
    if w[0] < s[0] - 1e-9 or w[-1] > s[-1] + 1e-9:
        raise HorizonExceedsTraceError(
            f"waypoints [{w[0]:.3f}, {w[-1]:.3f}] m exceed trace range [{s[0]:.3f}, {s[-1]:.3f}] m"
        )
    idx = np.searchsorted(s, w - 1e-12, side="left")
    idx = np.clip(idx, 0, len(s) - 1)
    out = t[idx].astype(float)
    inner = idx > 0
    i = idx[inner]
    s0, s1 = s[i - 1], s[i]
    frac = np.clip((w[inner] - s0) / (s1 - s0), 0.0, 1.0)
    out[inner] = t[i - 1] + frac * (t[i] - t[i - 1])
    return EtaSequence(out)


def corrupt_etas(truth: EtaSequence, noise: NoiseModel, rng: np.random.Generator | None = None) -> EtaSequence:
    """Scale each arrival-time gap by an independent draw from U(1 - sigma, 1 + sigma).

    The first arrival time is kept. ``rng`` defaults to a fresh generator
    seeded from ``noise.rng_seed``.
    """
    times = np.asarray(truth.times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ContractError("true arrival times must be strictly increasing")
    if noise.sigma == 0.0 or len(times) < 2:
        return EtaSequence(times.copy())
    if rng is None:
        rng = noise.generator()
    ratios = rng.uniform(1.0 - noise.sigma, 1.0 + noise.sigma, size=len(times) - 1)
    gaps = np.diff(times) * ratios
    return EtaSequence(np.concatenate([[times[0]], times[0] + np.cumsum(gaps)]))


@dataclass(frozen=True)
class PredictedTrajectory:
    """Piecewise-linear position prediction; continues at ``extrapolation_speed`` past the last knot."""

    times: np.ndarray
    positions: np.ndarray
    extrapolation_speed: float

    def __post_init__(self):
        if len(self.times) != len(self.positions) or len(self.times) < 1:
            raise ContractError("knot arrays must be nonempty and aligned")
        if np.any(np.diff(self.times) <= 0):
            raise ContractError("knot times must be strictly increasing")
        if np.any(np.diff(self.positions) < 0):
            raise ContractError("knot positions must be nondecreasing")

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.times[0] - 1e-9):
            raise OutOfDomainError(f"query before the first knot at t={self.times[0]}")
        out = np.interp(t_arr, self.times, self.positions)
        beyond = t_arr > self.times[-1]
        if np.any(beyond):
            out = np.where(beyond, self.positions[-1] + self.extrapolation_speed * (t_arr - self.times[-1]), out)
        return out if out.ndim else float(out)

    def clamped(self, t):
        """Evaluate with times before the first knot clamped to it."""
        return self(np.maximum(np.asarray(t, dtype=float), self.times[0]))

    def with_history(self, times, positions) -> "PredictedTrajectory":
        """Prepend observed past knots; those at or after the first knot are ignored."""
        times = np.asarray(times, dtype=float)
        keep = times < self.times[0] - 1e-9
        return PredictedTrajectory(np.concatenate([times[keep], self.times]),
                                   np.concatenate([np.asarray(positions, dtype=float)[keep], self.positions]),
                                   self.extrapolation_speed)

    @classmethod
    def from_trace(cls, trace: LeadTrace) -> "PredictedTrajectory":
        """A perfect prediction that replays the trace itself."""
        return cls(np.asarray(trace.t), np.asarray(trace.s), float(trace.v[-1]))


def interpolate(grid: WaypointGrid, etas: EtaSequence) -> PredictedTrajectory:
    times = np.asarray(etas.times, dtype=float)
    if len(times) != len(grid.waypoints):
        raise ContractError("waypoints and arrival times must be aligned")
    if len(times) >= 2:
        speed = float((grid.waypoints[-1] - grid.waypoints[-2]) / (times[-1] - times[-2]))
    else:
        speed = 0.0
    return PredictedTrajectory(times, np.asarray(grid.waypoints, dtype=float), speed)


def predict(trace: LeadTrace, t_now: float, spacing: float, horizon: float, noise: NoiseModel,
            rng: np.random.Generator | None = None) -> PredictedTrajectory:
    """One prediction-layer update at ``t_now``.

    Waypoints the lead never reaches within the (already extended) trace are
    dropped, so a lead that comes to rest yields a prediction that stops at
    the last reachable waypoint.
    """
    future = trace.since(t_now)
    grid = make_waypoints(float(future.s[0]), spacing, horizon).truncated(float(future.s[-1]))
    truth = true_arrival_times(future, grid)
    return interpolate(grid, corrupt_etas(truth, noise, rng))
