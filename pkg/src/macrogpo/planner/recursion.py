"""Value recursions and the epsilon-Macro-GPO policy.

Nodes of the lookahead tree are addressed by two tuples:

* ``prefix``: action indices taken since the root; fixes the geometry.
* ``key``: the sample path ``(a0, l0, a1, l1, ...)``; seeds the node's draws.

The samples for action ``a`` at a node with key ``k`` come from the stream
seeded by ``(master_seed, k + (a,))``.  Any planner that follows this
convention, the anytime search included, sees exactly the same samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ..environments import MacroAction, MacroActionCatalog
from ..errors import CapabilityError, InvalidInputError
from ..gp import KernelParams, ObservationSet, info_gain, posterior
from .config import PlannerConfig
from .problem import PlanningProblem, Prefix
from .tables import PlanningTables, SamplingPlan, build_tables, sampling_plan

Innovations = Callable[[Tuple[int, ...], int, int], np.ndarray]


def seeded_innovations(master_seed: int) -> Innovations:
    """Standard-normal draws whose stream depends only on ``(master_seed, key)``."""

    def draw(key, n, k):
        ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(v) for v in key))
        return np.random.default_rng(ss).standard_normal((n, k))

    return draw


def zero_innovations(key, n, k) -> np.ndarray:
    return np.zeros((n, k))


def draw_samples(problem: PlanningProblem, prefix: Prefix, index: int, z: np.ndarray,
                 key: Tuple[int, ...], n: int, innovations: Innovations) -> np.ndarray:
    """``n`` output vectors ``mu + Psi x`` for taking ``index`` at the node."""
    act = problem.action_geometry(prefix, index)
    x = np.asarray(innovations(tuple(key) + (index,), n, problem.kappa), dtype=float)
    return problem.mean(prefix, index, z)[None, :] + x @ act.chol.T


def reward(action: MacroAction, data: ObservationSet, params: KernelParams, beta: float = 0.0) -> float:
    """Stage reward of one macro-action: summed posterior means plus ``beta`` times the info gain."""
    if beta < 0:
        raise InvalidInputError("beta must be >= 0")
    belief = posterior(action.as_array(), data, params)
    value = float(belief.mean.sum())
    if beta:
        value += beta * info_gain(belief, params.noise_variance)
    return value


# ---------------------------------------------------------------------------
# Most-likely recursion


class MostLikelyRecursion:
    """Direct, memoized evaluation of the most-likely recursion.

    Measurements are replaced by their posterior means, so each node has a
    single child per action.  Memo keys are ``(prefix, z bytes)``.
    """

    def __init__(self, problem: PlanningProblem):
        self.problem = problem
        self._memo: Dict[Tuple[Prefix, bytes], float] = {}

    def q(self, prefix: Prefix, z) -> np.ndarray:
        pb = self.problem
        z = np.asarray(z, dtype=float)
        out = np.empty(len(pb.actions(prefix)))
        for i in range(out.shape[0]):
            r = pb.reward(prefix, i, z)
            if len(prefix) + 1 < pb.horizon:
                child = np.concatenate([z, pb.mean(prefix, i, z)])
                r = r + self.value(prefix + (i,), child)
            out[i] = r
        return out

    def value(self, prefix: Prefix, z) -> float:
        if len(prefix) >= self.problem.horizon:
            return 0.0
        z = np.asarray(z, dtype=float)
        key = (prefix, z.tobytes())
        hit = self._memo.get(key)
        if hit is None:
            q = self.q(prefix, z)
            hit = float(q.max()) if q.size else 0.0
            self._memo[key] = hit
        return hit


# ---------------------------------------------------------------------------
# Sampled recursion


def sampled_tree_size(A: int, N: int, H: int) -> int:
    """(t, action, sample) triples in a full sampled tree with ``A`` actions everywhere."""
    total, nodes = 0, 1
    for t in range(H):
        per_node = A * (N if t < H - 1 else 1)
        total += nodes * per_node
        nodes *= A * N
    return total


class SampledRecursion:
    """The sampled recursion with ``N`` draws per action per stage.

    ``nodes`` counts every evaluated (stage, action, sample) triple; the
    last stage evaluates rewards only, which counts once per action.
    """

    def __init__(self, problem: PlanningProblem, samples: int,
                 innovations: Innovations, tree_cap: float = 5e7):
        if samples < 1:
            raise InvalidInputError("samples must be >= 1")
        self.problem = problem
        self.samples = int(samples)
        self.innovations = innovations
        self.tree_cap = tree_cap
        self.nodes = 0

    def check_size(self) -> None:
        A = max(1, self.problem.max_actions)
        size = sampled_tree_size(A, self.samples, self.problem.horizon)
        if size > self.tree_cap:
            raise CapabilityError(
                f"sampled tree has up to {size:.3g} nodes (cap {self.tree_cap:.3g}); "
                "reduce N, H or the action count, or use the anytime planner"
            )

    def q(self, prefix: Prefix, z, key: Tuple[int, ...] = ()) -> np.ndarray:
        pb = self.problem
        z = np.asarray(z, dtype=float)
        n_act = len(pb.actions(prefix))
        out = np.empty(n_act)
        last = len(prefix) + 1 >= pb.horizon
        for i in range(n_act):
            r = float(pb.reward(prefix, i, z))
            if last:
                self.nodes += 1
                out[i] = r
                continue
            zs = draw_samples(pb, prefix, i, z, key, self.samples, self.innovations)
            self.nodes += self.samples
            child = prefix + (i,)
            stacked = np.hstack([np.broadcast_to(z, (self.samples, z.shape[0])), zs])
            if len(child) + 1 >= pb.horizon:
                vals = self._terminal_values(child, stacked)
            else:
                vals = np.array([
                    self.value(child, stacked[l], key + (i, l)) for l in range(self.samples)
                ])
            out[i] = r + float(vals.mean())
        return out

    def _terminal_values(self, prefix: Prefix, Z: np.ndarray) -> np.ndarray:
        """Values of a batch of last-stage nodes sharing ``prefix``: max over rewards."""
        pb = self.problem
        n_act = len(pb.actions(prefix))
        self.nodes += n_act * Z.shape[0]
        if n_act == 0:
            return np.zeros(Z.shape[0])
        R = np.column_stack([pb.reward(prefix, b, Z) for b in range(n_act)])
        return R.max(axis=1)

    def value(self, prefix: Prefix, z, key: Tuple[int, ...] = ()) -> float:
        if len(prefix) >= self.problem.horizon:
            return 0.0
        q = self.q(prefix, z, key)
        return float(q.max()) if q.size else 0.0


# ---------------------------------------------------------------------------
# Policy


@dataclass
class PolicyDecision:
    """Outcome of one planning decision."""

    index: int
    action: MacroAction
    q_sampled: np.ndarray
    q_ml: np.ndarray
    q_policy: np.ndarray
    used_sampled: np.ndarray
    samples: int
    lam: float
    delta: float
    theta: float
    K: float
    nodes: int


def make_problem(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
                 config: PlannerConfig) -> PlanningProblem:
    return PlanningProblem(data, catalog, params, config.horizon, config.beta, config.prefix_cap)


def preprocess(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
               config: PlannerConfig) -> PlanningTables:
    """Measurement-independent work for one decision: geometry, L, theta, K and most-likely plans."""
    tables = build_tables(make_problem(data, catalog, params, config), config.theta_multiplier)
    tables.most_likely.plans(())
    return tables


def resolve_sampling(config: PlannerConfig, tables: PlanningTables, anytime: bool = False) -> SamplingPlan:
    return sampling_plan(config, tables.K, tables.theta.theta, tables.problem.horizon,
                         tables.max_actions, anytime=anytime)


def argmax_first(values: np.ndarray) -> int:
    """Index of the maximum; ties go to the earliest (lexicographically smallest) action."""
    return int(np.argmax(values))


def epsilon_policy(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
                   config: PlannerConfig, tables: Optional[PlanningTables] = None,
                   innovations: Optional[Innovations] = None) -> PolicyDecision:
    """Pick a macro-action by the sampled recursion, falling back to the
    most-likely value for any action whose two estimates disagree by more
    than ``lam * H + theta``."""
    if tables is None:
        tables = preprocess(data, catalog, params, config)
    pb = tables.problem
    actions = pb.actions(())
    if not actions:
        raise InvalidInputError("no macro-action is available from the current location")
    plan = resolve_sampling(config, tables)
    draw = innovations or seeded_innovations(config.seed)
    sampled = SampledRecursion(pb, plan.samples, draw, config.tree_cap)
    sampled.check_size()
    z = pb.root_z
    q_s = sampled.q((), z)
    q_m = tables.most_likely.q_values((), z)
    theta = tables.theta.theta
    use = np.abs(q_s - q_m) <= plan.lam * pb.horizon + theta
    q_eps = np.where(use, q_s, q_m)
    best = argmax_first(q_eps)
    return PolicyDecision(
        index=best, action=actions[best], q_sampled=q_s, q_ml=q_m, q_policy=q_eps,
        used_sampled=use, samples=plan.samples, lam=plan.lam, delta=plan.delta,
        theta=theta, K=tables.K, nodes=sampled.nodes,
    )


def most_likely_policy(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
                       config: PlannerConfig, tables: Optional[PlanningTables] = None) -> PolicyDecision:
    """Argmax of the most-likely action values; no sampling."""
    if tables is None:
        tables = build_tables(make_problem(data, catalog, params, config), config.theta_multiplier)
    pb = tables.problem
    actions = pb.actions(())
    if not actions:
        raise InvalidInputError("no macro-action is available from the current location")
    q_m = tables.most_likely.q_values((), pb.root_z)
    best = argmax_first(q_m)
    return PolicyDecision(
        index=best, action=actions[best], q_sampled=q_m, q_ml=q_m, q_policy=q_m,
        used_sampled=np.zeros(len(actions), dtype=bool), samples=0, lam=math.nan,
        delta=math.nan, theta=tables.theta.theta, K=tables.K, nodes=0,
    )
