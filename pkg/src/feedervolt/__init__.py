"""Voltage regulation studies for unbalanced radial feeders with a per-phase DVC."""

from .devices import DvcState, VoltVarCurve, dvc_apply, settle_local_control, vvc_evaluate
from .dispatch import (
    DispatchConfig,
    MetricsReport,
    ObjectiveValue,
    VoltageBand,
    objective_f_mu,
    objective_f_theta,
    optimal_dispatch,
    score_run,
)
from .errors import (
    ConvergenceError,
    ControlOscillationError,
    FeederVoltError,
    NumericalError,
    SimulationError,
    ValidationError,
)
from .harness import Scenario, ScenarioResult, emit_reports, load_scenario, run_scenario, run_supervised
from .model import FeederModel, load_feeder, parse_feeder
from .placement import evaluate_placements, rank_candidates
from .powerflow import OperatingPoint, VoltageSnapshot, current_mismatch, solve, solve_with_controls
from .profiles import generate_synthetic_profiles, load_profiles
from .supervisory import build_schedule, extract_trajectory, fit_curve, segment, shift_curve

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "ControlOscillationError", "DispatchConfig", "DvcState", "FeederModel",
    "FeederVoltError", "MetricsReport", "NumericalError", "ObjectiveValue", "OperatingPoint",
    "Scenario", "ScenarioResult", "SimulationError", "ValidationError", "VoltVarCurve",
    "VoltageBand", "VoltageSnapshot", "build_schedule", "current_mismatch", "dvc_apply",
    "emit_reports", "evaluate_placements", "extract_trajectory", "fit_curve",
    "generate_synthetic_profiles", "load_feeder", "load_profiles", "load_scenario",
    "objective_f_mu", "objective_f_theta", "optimal_dispatch", "parse_feeder", "rank_candidates",
    "run_scenario", "run_supervised", "score_run", "segment", "settle_local_control",
    "shift_curve", "solve", "solve_with_controls", "vvc_evaluate",
]
