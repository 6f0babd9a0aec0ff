"""Baselines-once, cells-many experiment runner behind the ``sweep`` command."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import oracle_plan, plan_velocities
from .dynamics import VehicleState
from .metrics import FuelModel, MetricsReport, evaluate
from .prediction import LeadTrace
from .sim import SimConfig, SimRecord, _initial_states, run, run_idm

log = logging.getLogger(__name__)


@dataclass
class Baselines:
    idm: SimRecord
    oracle_velocities: np.ndarray  # open-loop oracle plan speeds on the tick grid


def compute_baselines(config: SimConfig, trace: LeadTrace) -> Baselines:
    idm = run_idm(config, trace)
    _, ego = _initial_states(config, trace)
    plans = oracle_plan(trace.extended(config.spatial_horizon), config.planner, config.headway,
                        VehicleState(ego.s, ego.v), config.qp,
                        n_plans=int(np.floor(trace.duration / config.plan_period + 1e-9)))
    ticks = float(trace.t[0]) + config.track_period * np.arange(len(idm))
    return Baselines(idm, plan_velocities(plans, ticks))


def run_cell(config: SimConfig, trace: LeadTrace, baselines: Baselines, ds: float, sigma: float,
             seed: int, model: FuelModel | None = None) -> MetricsReport:
    cfg = config.with_noise(ds, sigma, seed)
    tic = time.perf_counter()
    record = run(cfg, trace)
    log.info("cell ds=%g sigma=%g seed=%d done in %.1fs", ds, sigma, seed, time.perf_counter() - tic)
    return evaluate(record, baselines.idm, baselines.oracle_velocities, cfg.track_period,
                    cfg.vehicle_length, ds, sigma, seed, model)


def _cell_job(args):
    return run_cell(*args)


def run_grid(config: SimConfig, trace: LeadTrace, cells, seeds, jobs: int = 1,
             baselines: Baselines | None = None, model: FuelModel | None = None) -> list[MetricsReport]:
    """Metrics for every (ds, sigma, seed), in cell-major, seed-minor order."""
    baselines = baselines or compute_baselines(config, trace)
    tasks = [(config, trace, baselines, ds, sg, seed, model) for ds, sg in cells for seed in seeds]
    if jobs <= 1:
        return [_cell_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_cell_job, tasks, chunksize=1))
