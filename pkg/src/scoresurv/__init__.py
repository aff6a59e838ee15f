"""Training survival models by minimizing censoring-adapted scoring rules."""

from scoresurv.core import (
    StepFunction,
    SurvivalDataset,
    SurvivalRecord,
    TimeGrid,
    aalen_johansen,
    censoring_weight,
    kaplan_meier,
    load_csv,
    make_grid,
    split,
)
from scoresurv.score import ScoringRuleKind

__version__ = "0.1.0"

__all__ = [
    "ScoringRuleKind",
    "StepFunction",
    "SurvivalDataset",
    "SurvivalRecord",
    "TimeGrid",
    "aalen_johansen",
    "censoring_weight",
    "kaplan_meier",
    "load_csv",
    "make_grid",
    "split",
]
