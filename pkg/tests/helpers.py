"""Shared scenario builders for the controller tests."""

import numpy as np

from etampc.envelope import HeadwayParams, build_envelopes
from etampc.prediction import PredictedTrajectory


def constant_lead_env(v=10.0, s0=0.0, t0=0.0, t_end=400.0, params=HeadwayParams()):
    """Envelopes of a lead moving at ``v`` through ``s0`` at ``t0``; history starts 10 s earlier."""
    times = np.array([t0 - 10.0, t_end])
    pos = s0 + v * (times - t0)
    return build_envelopes(PredictedTrajectory(times, pos, v), params)


def wavy_lead_env(seed=0, t0=0.0, duration=400.0, params=HeadwayParams()):
    rng = np.random.default_rng(seed)
    times = t0 - 10.0 + np.cumsum(np.r_[0.0, rng.uniform(2.0, 15.0, 60)])
    speeds = rng.uniform(2.0, 30.0, len(times) - 1)
    pos = np.r_[0.0, np.cumsum(speeds * np.diff(times))]
    pos -= np.interp(t0, times, pos)
    return build_envelopes(PredictedTrajectory(times, pos, float(speeds[-1])), params), times, pos
