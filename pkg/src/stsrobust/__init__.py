"""Finite-horizon robust LQR tracking of sit-to-stand maneuvers for a
three-link crutch-assisted lower-limb orthosis model."""

from .model import ParameterBox, ParameterVector, table_one_box, table_one_nominal
from .planner import STS1, STS2, AllocationSpec, ManeuverSpec, ReferenceTrajectory, build_reference
from .linearizer import LtvSystem, linearize
from .lqr import GainSchedule, LqrWeights, design_gain
from .robust import GainReport, build_parameter_filter, evaluate_gain_schedule
from .search import SearchResult, SearchSpace, latin_hypercube, select_weights
from .simulator import MonteCarloReport, monte_carlo, simulate_closed_loop

__version__ = "0.1.0"

__all__ = [
    "AllocationSpec", "GainReport", "GainSchedule", "LqrWeights", "LtvSystem", "ManeuverSpec",
    "MonteCarloReport", "ParameterBox", "ParameterVector", "ReferenceTrajectory", "STS1", "STS2",
    "SearchResult", "SearchSpace", "build_parameter_filter", "build_reference", "design_gain",
    "evaluate_gain_schedule", "latin_hypercube", "linearize", "monte_carlo", "select_weights",
    "simulate_closed_loop", "table_one_box", "table_one_nominal",
]
