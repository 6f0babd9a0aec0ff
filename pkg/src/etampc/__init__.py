"""ETA-informed hierarchical MPC for car following."""

from .dynamics import VehicleState, discretize, rollout, step
from .envelope import HeadwayParams, build_envelopes, safety_envelope
from .planner import DegradedPlanError, InfeasiblePlanError, PlannerParams, plan
from .prediction import LeadTrace, NoiseModel, predict, read_trace_csv
from .qp import ContractError, QpProblem, QpSettings, QpSolver, Status, solve
from .tracker import TrackerParams, track

__version__ = "0.1.0"
