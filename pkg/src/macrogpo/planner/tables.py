"""Lipschitz constants, most-likely error bounds, and sample-size calculators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy.optimize import brentq

from ..errors import InvalidInputError
from ..gp import ConditioningFactor, KernelParams
from .config import DEFAULT_DELTA, PlannerConfig
from .problem import PlanningProblem, Prefix


def alpha(prefix_locations, action_locations, params: KernelParams) -> float:
    """Frobenius norm of the regression weights of the action on the prefix locations."""
    prefix_locations = np.asarray(prefix_locations, dtype=float).reshape(-1, params.dim)
    if prefix_locations.shape[0] == 0:
        return 0.0
    W, _ = ConditioningFactor(params, prefix_locations).regression(action_locations)
    return float(np.linalg.norm(W))


@dataclass
class LipschitzTable:
    """``values[prefix]`` is the value Lipschitz constant of a node with that prefix;
    ``alphas[prefix + (a,)]`` the reward Lipschitz factor of taking ``a`` there."""

    horizon: int
    values: Dict[Prefix, float] = field(default_factory=dict)
    alphas: Dict[Prefix, float] = field(default_factory=dict)

    def __getitem__(self, prefix: Prefix) -> float:
        if len(prefix) == self.horizon:
            return 0.0
        return self.values[prefix]


def lipschitz_table(problem: PlanningProblem) -> LipschitzTable:
    """Backward recursion over every reachable prefix:
    ``L_t = max_a sqrt(kappa) * alpha + L_{t+1} * sqrt(1 + alpha^2)`` with ``L_H = 0``."""
    H = problem.horizon
    table = LipschitzTable(horizon=H)
    root_k = math.sqrt(problem.kappa)
    order = list(problem.prefixes(H - 1))
    for p in reversed(order):  # children come after parents in DFS order
        best = 0.0
        for i in range(len(problem.actions(p))):
            child = p + (i,)
            a = problem.action_geometry(p, i).alpha
            table.alphas[child] = a
            best = max(best, root_k * a + table[child] * math.sqrt(1.0 + a * a))
        table.values[p] = best
    return table


@dataclass(frozen=True)
class ThetaTable:
    """Deterministic most-likely error bounds per stage; ``stages[H-1] == 0``."""

    stages: Tuple[float, ...]

    @property
    def theta(self) -> float:
        return max(self.stages) if self.stages else 0.0

    def at(self, t: int) -> float:
        return self.stages[t] if t < len(self.stages) else 0.0


def _stage_terms(problem: PlanningProblem, lipschitz: LipschitzTable):
    """Per stage, the max over reachable (prefix, action) of ``L_{t+1} * sqrt(Tr Sigma)``."""
    H = problem.horizon
    terms = [0.0] * H
    for p in problem.prefixes(H - 1):
        t = len(p)
        for i in range(len(problem.actions(p))):
            geo = problem.action_geometry(p, i)
            terms[t] = max(terms[t], lipschitz[p + (i,)] * math.sqrt(max(geo.trace, 0.0)))
    return terms


def theta_table(lipschitz: LipschitzTable, problem: PlanningProblem, multiplier: float = 1.0) -> ThetaTable:
    """``theta_t = max [L_{t+1} sqrt(Tr Sigma) sqrt(kappa)] + theta_{t+1}``, ``theta_{H-1} = 0``."""
    H = problem.horizon
    terms = _stage_terms(problem, lipschitz)
    stages = [0.0] * H
    for t in range(H - 2, -1, -1):
        stages[t] = terms[t] * math.sqrt(problem.kappa) + stages[t + 1]
    return ThetaTable(tuple(multiplier * s for s in stages))


def lipschitz_trace_max(problem: PlanningProblem, lipschitz: LipschitzTable) -> float:
    """``K``: the largest ``L_{t+1} * sqrt(Tr Sigma)`` over all reachable tuples."""
    return max(_stage_terms(problem, lipschitz), default=0.0)


def _n_formula(lam: float, delta: float, K: float, H: int, A: int) -> float:
    k2 = K * K
    return 4.0 * k2 / lam**2 * (H * math.log(4.0 * k2 * H * A / (math.e * lam**2)) + math.log(2.0 / delta))


def sample_size(lam: float, delta: float, K: float, H: int, A: int) -> int:
    """Samples per stage per action guaranteeing ``|Q_sampled - Q*| <= lam * H`` w.p. ``1 - delta``."""
    if not lam > 0:
        raise InvalidInputError("lam must be > 0")
    if not 0 < delta < 1:
        raise InvalidInputError("delta must lie in (0, 1)")
    if K <= 0:
        return 1
    return max(1, math.ceil(_n_formula(lam, delta, K, H, A)))


def lambda_for_samples(N: int, delta: float, K: float, H: int, A: int) -> float:
    """Smallest ``lam`` whose sample-size requirement does not exceed ``N``."""
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    if not 0 < delta < 1:
        raise InvalidInputError("delta must lie in (0, 1)")
    if K <= 0:
        return 0.0

    def gap(log_lam):
        return _n_formula(math.exp(log_lam), delta, K, H, A) - N

    lo = math.log(K) - 1.0
    while gap(lo) <= 0:
        lo -= 2.0
    hi = math.log(K) + 1.0
    while gap(hi) > 0:
        hi += 2.0
    return math.exp(brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12))


@dataclass(frozen=True)
class SamplingPlan:
    samples: int
    lam: float
    delta: float


def sampling_plan(config: PlannerConfig, K: float, theta: float, H: int, A: int,
                  anytime: bool = False) -> SamplingPlan:
    """Resolve ``(N, lam, delta)`` from whichever of them the config pins."""
    if config.samples is not None:
        delta = config.delta if config.delta is not None else DEFAULT_DELTA
        return SamplingPlan(config.samples, lambda_for_samples(config.samples, delta, K, H, A), delta)
    if config.epsilon is not None:
        eps = config.epsilon
        if anytime:
            lam = 1.0 / (4.0 * H / eps + (1.0 / (2.0 * theta) if theta > 0 else math.inf))
        else:
            lam = eps / (4.0 * H * H)
        delta = eps / (8.0 * theta * H) if theta > 0 else 0.5
        delta = min(delta, 0.5)
    else:
        lam, delta = config.lam, config.delta
    if lam <= 0:
        return SamplingPlan(1, 0.0, delta)
    return SamplingPlan(sample_size(lam, delta, K, H, A), lam, delta)


class MostLikelyTable:
    """Most-likely-observation values as a maximum of affine functions.

    Along a fixed action sequence, substituting posterior means for
    observations keeps every stage reward affine in the measurements seen
    so far, so ``V_ml(prefix, z) = max_p (c_p + g_p . (z - m0))`` over the
    open-loop plans ``p`` continuing the prefix.  Coefficients are
    measurement-independent and cached per prefix.
    """

    def __init__(self, problem: PlanningProblem):
        self.problem = problem
        self._plans: Dict[Prefix, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def plans(self, prefix: Prefix):
        """``(const, grad, first_action)`` arrays for all plans from ``prefix``."""
        hit = self._plans.get(prefix)
        if hit is not None:
            return hit
        pb = self.problem
        n = pb.geometry(prefix).size
        if len(prefix) == pb.horizon or not pb.actions(prefix):
            # past the horizon, or a dead end: the only continuation is worth 0
            hit = (np.zeros(1), np.zeros((1, n)), np.full(1, -1))
        else:
            consts, grads, first = [], [], []
            m0 = pb.params.prior_mean
            for i in range(len(pb.actions(prefix))):
                act = pb.action_geometry(prefix, i)
                c, G, _ = self.plans(prefix + (i,))
                consts.append(pb.kappa * m0 + pb.beta * act.info_gain + c)
                grads.append(act.weight_sum[None, :] + G[:, :n] + G[:, n:] @ act.weights)
                first.append(np.full(c.shape[0], i))
            hit = (np.concatenate(consts), np.vstack(grads), np.concatenate(first))
        self._plans[prefix] = hit
        return hit

    def value(self, prefix: Prefix, z):
        """Most-likely value at a node; ``z`` may be ``(n,)`` or ``(m, n)``."""
        c, G, _ = self.plans(prefix)
        scores = c + (np.asarray(z) - self.problem.params.prior_mean) @ G.T
        return scores.max(axis=-1)

    def q_values(self, prefix: Prefix, z) -> np.ndarray:
        """Most-likely action values at a node with data ``z`` (shape ``(A,)``)."""
        c, G, first = self.plans(prefix)
        scores = c + (np.asarray(z) - self.problem.params.prior_mean) @ G.T
        n_act = len(self.problem.actions(prefix))
        if n_act == 0:
            return np.zeros(0)
        out = np.full(n_act, -np.inf)
        np.maximum.at(out, first, scores)
        return out


@dataclass
class PlanningTables:
    """Everything measurement-independent a planner needs for one decision."""

    problem: PlanningProblem
    lipschitz: LipschitzTable
    theta: ThetaTable
    K: float
    max_actions: int
    most_likely: MostLikelyTable
    prefix_count: int


def build_tables(problem: PlanningProblem, theta_multiplier: float = 1.0) -> PlanningTables:
    count = problem.prepare()
    lip = lipschitz_table(problem)
    return PlanningTables(
        problem=problem,
        lipschitz=lip,
        theta=theta_table(lip, problem, theta_multiplier),
        K=lipschitz_trace_max(problem, lip),
        max_actions=problem.max_actions,
        most_likely=MostLikelyTable(problem),
        prefix_count=count,
    )
