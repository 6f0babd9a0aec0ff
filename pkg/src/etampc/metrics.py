"""Tracking error, fuel model and fuel-saving ratio."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .qp import ContractError

METRIC_COLUMNS = ("ds", "sigma", "seed", "e", "f", "min_gap", "collision")


class FuelRate(Protocol):
    def rate(self, v, a) -> np.ndarray: ...


@dataclass(frozen=True)
class FuelModel:
    """Polynomial fuel-rate surface in mL/s.

    ``rate = max(0, c0 + c1 v + c2 v^2 + c3 v^3 + c4 max(a, 0) v)``. Defaults
    describe a mid-size petrol sedan: 0.27 mL/s idle, cubic aerodynamic load
    and an inertial term that only charges for positive tractive power.
    """

    c0: float = 0.27
    c1: float = 0.015
    c2: float = 0.0
    c3: float = 4.0e-5
    c4: float = 0.15
    name: str = "poly-sedan"

    def __post_init__(self):
        coeffs = (self.c0, self.c1, self.c2, self.c3, self.c4)
        if not all(math.isfinite(c) and c >= 0 for c in coeffs):
            raise ContractError("fuel model coefficients must be finite and nonnegative")
        if self.c0 <= 0:
            raise ContractError("fuel model needs a positive idle term")

    def rate(self, v, a):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        a = np.asarray(a, dtype=float)
        r = self.c0 + v * (self.c1 + v * (self.c2 + v * self.c3)) + self.c4 * np.maximum(a, 0.0) * v
        return np.maximum(r, 0.0)


def tracking_error(reference, actual) -> float:
    """Population standard deviation of ``reference - actual``."""
    reference = np.asarray(reference, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if reference.shape != actual.shape or reference.ndim != 1:
        raise ContractError(f"series shapes differ: {reference.shape} vs {actual.shape}")
    if reference.size == 0:
        raise ContractError("empty series")
    return float(np.std(reference - actual))


def fuel_total(v, a, dt: float, model: FuelRate | None = None) -> float:
    """Left Riemann sum of the fuel rate over uniformly sampled ``(v, a)``."""
    model = model or FuelModel()
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    if v.shape != a.shape:
        raise ContractError("speed and acceleration series differ in length")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(a)) and dt > 0):
        raise ContractError("non-finite fuel input")
    return float(np.sum(model.rate(v, a)) * dt)


def record_fuel(record, dt: float, model: FuelRate | None = None) -> float:
    return fuel_total(record.v1, record.a1, dt, model)


def fuel_saving(idm_record, mpc_record, dt: float, model: FuelRate | None = None) -> float:
    """``100 * F_idm / F_mpc`` in percent; both records must cover the same trace."""
    if len(idm_record) != len(mpc_record):
        raise ContractError("records cover different durations")
    f_mpc = record_fuel(mpc_record, dt, model)
    if f_mpc <= 0:
        raise ContractError("MPC fuel total is zero")
    return 100.0 * record_fuel(idm_record, dt, model) / f_mpc


@dataclass
class MetricsReport:
    ds: float
    sigma: float
    seed: int
    e: float
    f: float
    fuel_mpc: float
    fuel_idm: float
    min_gap: float
    max_gap: float
    collision: bool

    def row(self):
        return (self.ds, self.sigma, self.seed, self.e, self.f, self.min_gap, self.collision)


def evaluate(record, idm_record, oracle_velocities, dt: float, vehicle_length: float,
             ds: float, sigma: float, seed: int, model: FuelRate | None = None) -> MetricsReport:
    """Metrics for one closed-loop run. A collided run gets NaN for e and f."""
    gaps = record.gap - vehicle_length
    if record.collision:
        return MetricsReport(ds, sigma, seed, float("nan"), float("nan"), float("nan"),
                             record_fuel(idm_record, dt, model), float(np.min(gaps, initial=np.inf)),
                             float(np.max(gaps, initial=-np.inf)), True)
    n = len(record)
    e = tracking_error(np.asarray(oracle_velocities)[:n], record.v1)
    f_mpc = record_fuel(record, dt, model)
    f_idm = record_fuel(idm_record, dt, model)
    return MetricsReport(ds, sigma, seed, e, 100.0 * f_idm / f_mpc, f_mpc, f_idm,
                         float(gaps.min()), float(gaps.max()), False)


def write_metrics_csv(reports, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in reports:
            w.writerow([_fmt(x) for x in r.row()])


def _fmt(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return f"{float(x):.10g}"


def aggregate(reports):
    """Mean e, f and min gap per (ds, sigma) cell; collided seeds are excluded from e and f."""
    cells: dict = {}
    for r in reports:
        cells.setdefault((r.ds, r.sigma), []).append(r)
    out = []
    for (ds, sigma), rs in sorted(cells.items()):
        ok = [r for r in rs if not r.collision]
        out.append({
            "ds": ds, "sigma": sigma, "n": len(rs),
            "e_mean": float(np.mean([r.e for r in ok])) if ok else float("nan"),
            "f_mean": float(np.mean([r.f for r in ok])) if ok else float("nan"),
            "min_gap": float(min(r.min_gap for r in rs)),
            "collisions": sum(r.collision for r in rs),
        })
    return out


def write_aggregate_csv(rows, path) -> None:
    cols = ("ds", "sigma", "n", "e_mean", "f_mean", "min_gap", "collisions")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
