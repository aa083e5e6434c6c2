"""Exact planners over macro-actions."""

from .config import PlannerConfig
from .problem import PlanningProblem
from .recursion import (
    MostLikelyRecursion,
    PolicyDecision,
    SampledRecursion,
    epsilon_policy,
    make_problem,
    most_likely_policy,
    preprocess,
    reward,
    seeded_innovations,
    zero_innovations,
)
from .tables import (
    LipschitzTable,
    MostLikelyTable,
    ThetaTable,
    alpha,
    build_tables,
    lambda_for_samples,
    lipschitz_table,
    sample_size,
    theta_table,
)

__all__ = [
    "LipschitzTable", "MostLikelyRecursion", "MostLikelyTable", "PlannerConfig",
    "PlanningProblem", "PolicyDecision", "SampledRecursion", "ThetaTable", "alpha",
    "build_tables", "epsilon_policy", "lambda_for_samples", "lipschitz_table",
    "make_problem", "most_likely_policy", "preprocess", "reward", "sample_size",
    "seeded_innovations", "theta_table", "zero_innovations",
]
