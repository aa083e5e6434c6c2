"""Myopic and reduced comparators sharing the same GP belief."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.stats import norm

from .environments import MacroAction, MacroActionCatalog
from .errors import InvalidInputError
from .gp import ConditioningFactor, KernelParams, ObservationSet
from .planner.config import PlannerConfig
from .planner.recursion import PolicyDecision, epsilon_policy, most_likely_policy


def db_gp_ucb(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
              config: PlannerConfig) -> PolicyDecision:
    """One-stage lookahead: argmax over macro-actions of the stage reward."""
    return epsilon_policy(data, catalog, params, config.replace(horizon=1))


def nonmyopic_ucb_ml(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
                     config: PlannerConfig) -> PolicyDecision:
    """H-stage lookahead that plans with most-likely observations only."""
    return most_likely_policy(data, catalog, params, config)


@dataclass
class GreedyDecision:
    index: int
    action: MacroAction
    scores: List[float]          # score of the chosen location at each step
    nodes: int = 0


def _score(mean, var, beta, scoring, incumbent):
    sd = np.sqrt(np.maximum(var, 0.0))
    if scoring == "ucb":
        return mean + np.sqrt(beta) * sd
    # expected improvement over the best measurement so far
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, (mean - incumbent) / sd, 0.0)
    return np.where(sd > 0, (mean - incumbent) * norm.cdf(u) + sd * norm.pdf(u),
                    np.maximum(mean - incumbent, 0.0))


def greedy_hallucinated_ucb(data: ObservationSet, catalog: MacroActionCatalog,
                            params: KernelParams, config: PlannerConfig,
                            scoring: str = "ucb") -> GreedyDecision:
    """Walk the macro-action tree one location at a time, greedily.

    Each step scores the distinct next locations of the still-compatible
    macro-actions by ``mean + sqrt(beta) * sd`` (or expected improvement
    with ``scoring="ei"``).  Earlier picks are hallucinated at their
    posterior mean: the mean is unchanged and the variance is conditioned
    on them.
    """
    if scoring not in ("ucb", "ei"):
        raise InvalidInputError(f"unknown scoring {scoring!r}")
    if len(data) == 0:
        raise InvalidInputError("need at least the agent's current location")
    actions = catalog(tuple(data.locations[-1]))
    if not actions:
        raise InvalidInputError("no macro-action is available from the current location")
    kappa = catalog.kappa
    base = ConditioningFactor(params, data.locations)
    factor = base
    m0 = params.prior_mean
    centred = data.measurements - m0
    incumbent = float(data.measurements.max())
    alive = list(range(len(actions)))
    scores: List[float] = []
    for step in range(kappa):
        options = sorted({actions[i].path[step] for i in alive})
        pts = np.asarray(options, dtype=float)
        W0, _ = base.regression(pts)
        mean = m0 + W0 @ centred
        _, cov = factor.regression(pts)
        s = _score(mean, np.diag(cov), config.beta, scoring, incumbent)
        best = int(np.argmax(s))
        scores.append(float(s[best]))
        chosen = options[best]
        alive = [i for i in alive if actions[i].path[step] == chosen]
        factor = factor.extend(pts[best : best + 1])
    index = alive[0]
    return GreedyDecision(index=index, action=actions[index], scores=scores)
