"""Byzantine-resilient gradient aggregation: rules, attacks, simulator, checks and benchmarks."""

from .attacks import ATTACKS, AttackSpec, gen_byzantine
from .gar import (
    RULES,
    GarParams,
    PreconditionError,
    ScoreTable,
    aggregate,
    average_gar,
    krum_gar,
    krum_scores,
    max_f,
    median_gar,
    multi_bulyan,
    multi_krum,
)
from .simulator import CostModel, LearningRate, SimConfig, SimMetrics, run_simulation, slowdown

__version__ = "0.1.0"

__all__ = [
    "ATTACKS",
    "AttackSpec",
    "gen_byzantine",
    "RULES",
    "GarParams",
    "PreconditionError",
    "ScoreTable",
    "aggregate",
    "average_gar",
    "krum_gar",
    "krum_scores",
    "max_f",
    "median_gar",
    "multi_bulyan",
    "multi_krum",
    "CostModel",
    "LearningRate",
    "SimConfig",
    "SimMetrics",
    "run_simulation",
    "slowdown",
]
