"""Anytime branch-and-bound search over the sampled lookahead tree.

Every node keeps an interval ``[lower, upper]`` on its optimal value.
Children start from the most-likely value plus or minus the stage's
deterministic error bound, one most-likely child per action is expanded
eagerly, and sibling intervals are tightened through the value Lipschitz
constant.  Further iterations descend towards the action with the best
lower bound and the child with the widest interval.

Samples come from the same per-node streams as the exact planner
(:mod:`macrogpo.planner.recursion`), so a fully expanded tree reproduces
the exact planner's sampled values.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .environments import MacroAction, MacroActionCatalog
from .errors import InvalidInputError, MacroGPOError
from .gp import KernelParams, ObservationSet
from .planner.config import PlannerConfig
from .planner.problem import Prefix
from .planner.recursion import (
    Innovations,
    argmax_first,
    draw_samples,
    preprocess,
    resolve_sampling,
    seeded_innovations,
)
from .planner.tables import PlanningTables

_TOL = 1e-9


class BoundViolation(MacroGPOError, AssertionError):
    """An interval widened or inverted; indicates a bug, never a data condition."""


@dataclass
class ActionRecord:
    """Per-action state of an explored node."""

    reward: float
    samples: Optional[np.ndarray]         # (N, kappa); None when children are terminal
    children: List["SearchNode"]
    q_lower: float = -math.inf
    q_upper: float = math.inf


@dataclass
class SearchNode:
    prefix: Prefix
    key: Tuple[int, ...]
    z: np.ndarray
    lower: float = -math.inf
    upper: float = math.inf
    explored: bool = False
    records: List[ActionRecord] = field(default_factory=list)

    @property
    def stage(self) -> int:
        return len(self.prefix)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


@dataclass
class AnytimeResult:
    index: int
    action: Optional[MacroAction]
    omega: float
    iterations: int
    nodes: int
    omega_trace: List[float]
    root_lower: float
    root_upper: float
    q_lower: np.ndarray
    q_upper: np.ndarray
    q_ml: np.ndarray
    q_policy: np.ndarray
    lam: float
    delta: float
    theta: float
    samples: int
    fallback: bool = False
    converged: bool = False
    conflicts: int = 0
    max_iteration_nodes: int = 0


def iteration_node_cap(A: int, N: int, H: int) -> int:
    """Most (stage, action, sample) triples a single iteration can evaluate.

    One iteration expands at most one fresh node, at some stage ``t``, and
    then one most-likely child per action at every deeper stage.
    """
    best = 0
    for t in range(H):
        total, width = 0, 1
        for u in range(t, H):
            total += width * A * (N if u < H - 1 else 1)
            width *= A
        best = max(best, total)
    return best


class AnytimeSearch:
    """One search tree for one decision."""

    def __init__(self, tables: PlanningTables, samples: int, lam: float,
                 innovations: Innovations, node_cap: float = 5e7):
        self.tables = tables
        self.problem = tables.problem
        self.samples = int(samples)
        self.lam = float(lam)
        self.innovations = innovations
        self.node_cap = node_cap
        self.nodes = 0
        self.conflicts = 0
        self._expanded = False
        z = self.problem.root_z
        self.root = SearchNode(prefix=(), key=(), z=np.asarray(z, dtype=float))

    # -- bound bookkeeping -------------------------------------------------

    def _tighten(self, node: SearchNode, lower: float, upper: float) -> None:
        """Intersect a node's interval with new evidence; never widens it."""
        new_lo = max(node.lower, lower)
        new_hi = min(node.upper, upper)
        if new_lo > new_hi + _TOL:
            # Disjoint evidence: only possible when a probabilistic bound failed.
            self.conflicts += 1
            return
        if new_lo < node.lower - _TOL or new_hi > node.upper + _TOL:
            raise BoundViolation("interval widened")
        node.lower, node.upper = new_lo, max(new_hi, new_lo)

    def _backup(self, node: SearchNode) -> None:
        for rec in node.records:
            if rec.children:
                lo = float(np.mean([c.lower for c in rec.children]))
                hi = float(np.mean([c.upper for c in rec.children]))
            else:
                lo = hi = 0.0
            q_lo = rec.reward + lo - self.lam
            q_hi = rec.reward + hi + self.lam
            if q_lo < rec.q_lower - _TOL or q_hi > rec.q_upper + _TOL:
                raise BoundViolation("action interval widened")
            rec.q_lower = max(rec.q_lower, q_lo)
            rec.q_upper = min(rec.q_upper, q_hi)
        if node.records:
            self._tighten(node, max(r.q_lower for r in node.records),
                          max(r.q_upper for r in node.records))
        else:
            self._tighten(node, 0.0, 0.0)

    def refine_bounds(self, node: SearchNode, index: int, anchor: int) -> None:
        """Transfer the anchor child's interval to its siblings through the Lipschitz constant."""
        rec = node.records[index]
        if not rec.children:
            return
        L = self.tables.lipschitz[node.prefix + (index,)]
        dist = np.linalg.norm(rec.samples - rec.samples[anchor], axis=1)
        a = rec.children[anchor]
        for i, child in enumerate(rec.children):
            if i == anchor:
                continue
            b = L * dist[i]
            self._tighten(child, a.lower - b, a.upper + b)

    # -- tree growth -------------------------------------------------------

    def expand_tree(self, node: SearchNode) -> Tuple[float, float]:
        pb = self.problem
        H = pb.horizon
        t = node.stage
        node.explored = True
        if t >= H:
            self._tighten(node, 0.0, 0.0)
            return node.upper, node.lower
        n_act = len(pb.actions(node.prefix))
        theta_next = self.tables.theta.at(t + 1)
        ml = self.tables.most_likely
        for i in range(n_act):
            reward = float(pb.reward(node.prefix, i, node.z))
            if t + 1 >= H:
                self.nodes += 1
                node.records.append(ActionRecord(reward, None, []))
                continue
            zs = draw_samples(pb, node.prefix, i, node.z, node.key, self.samples, self.innovations)
            self.nodes += self.samples
            child_prefix = node.prefix + (i,)
            stacked = np.hstack([np.broadcast_to(node.z, (self.samples, node.z.shape[0])), zs])
            v_ml = ml.value(child_prefix, stacked)
            children = [
                SearchNode(child_prefix, node.key + (i, l), stacked[l],
                           lower=float(v_ml[l]) - theta_next, upper=float(v_ml[l]) + theta_next)
                for l in range(self.samples)
            ]
            rec = ActionRecord(reward, zs, children)
            node.records.append(rec)
            mu = pb.mean(node.prefix, i, node.z)
            anchor = int(np.argmin(np.linalg.norm(zs - mu, axis=1)))
            self.expand_tree(children[anchor])
            self.refine_bounds(node, i, anchor)
        self._backup(node)
        return node.upper, node.lower

    def construct_tree(self, node: SearchNode) -> Tuple[float, float]:
        if not node.explored:
            return self.expand_tree(node)
        if node.stage >= self.problem.horizon or not node.records:
            return node.upper, node.lower
        best = argmax_first(np.array([r.q_lower for r in node.records]))
        rec = node.records[best]
        if rec.children:
            gaps = np.array([c.gap for c in rec.children])
            pick = int(np.argmax(gaps))
            self.construct_tree(rec.children[pick])
            self.refine_bounds(node, best, pick)
        self._backup(node)
        return node.upper, node.lower

    def iterate(self) -> int:
        """One descent from the root; returns the number of triples evaluated."""
        before = self.nodes
        self.construct_tree(self.root)
        self._expanded = True
        return self.nodes - before

    def expand_all(self, node: Optional[SearchNode] = None) -> None:
        """Explore every node below ``node`` (default: the root) and back up.

        Exhaustive; meant for small trees and same-sample checks.
        """
        node = self.root if node is None else node
        if not node.explored:
            self.expand_tree(node)
        for i, rec in enumerate(node.records):
            for child in rec.children:
                self.expand_all(child)
            if rec.children:
                self.refine_bounds(node, i, 0)
        self._backup(node)

    @property
    def omega(self) -> float:
        return self.root.upper - self.root.lower


def anytime_policy(data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
                   config: PlannerConfig, tables: Optional[PlanningTables] = None,
                   innovations: Optional[Innovations] = None,
                   iterations: Optional[int] = None, wallclock_ms: Optional[float] = None,
                   on_iteration=None) -> AnytimeResult:
    """Run the anytime search within an iteration and/or wallclock budget.

    An iteration is one descent from the root.  The wallclock budget is
    checked between iterations only.  The search also stops once an
    iteration adds nothing to the tree (every later descent would repeat
    it), or when the explored-node cap is reached.  With a zero budget the
    most-likely action values decide, and ``fallback`` is set.
    """
    iterations = config.iterations if iterations is None else iterations
    wallclock_ms = config.wallclock_ms if wallclock_ms is None else wallclock_ms
    if iterations is None and wallclock_ms is None:
        raise InvalidInputError("the anytime planner needs an iteration or wallclock budget")
    if (iterations is not None and iterations < 0) or (wallclock_ms is not None and wallclock_ms < 0):
        raise InvalidInputError("budgets must be >= 0")
    if tables is None:
        tables = preprocess(data, catalog, params, config)
    pb = tables.problem
    actions = pb.actions(())
    if not actions:
        raise InvalidInputError("no macro-action is available from the current location")
    plan = resolve_sampling(config, tables, anytime=True)
    search = AnytimeSearch(tables, plan.samples, plan.lam,
                           innovations or seeded_innovations(config.seed), config.node_cap)
    theta = tables.theta.theta
    q_ml = tables.most_likely.q_values((), pb.root_z)

    deadline = None if wallclock_ms is None else time.perf_counter() + wallclock_ms / 1000.0
    trace: List[float] = []
    done, converged, peak = 0, False, 0
    while True:
        if iterations is not None and done >= iterations:
            break
        if deadline is not None and done > 0 and time.perf_counter() >= deadline:
            break
        if deadline is not None and done == 0 and wallclock_ms == 0:
            break
        if search.nodes >= search.node_cap:
            break
        root_before = (search.root.lower, search.root.upper)
        grown = search.iterate()
        done += 1
        peak = max(peak, grown)
        if trace and search.omega > trace[-1] + _TOL:
            raise BoundViolation("root gap increased")
        trace.append(search.omega)
        if on_iteration is not None:
            on_iteration(search)
        if grown == 0 and (search.root.lower, search.root.upper) == root_before:
            converged = True
            break

    if done == 0:
        best = argmax_first(q_ml)
        nan = np.full(len(actions), np.nan)
        return AnytimeResult(
            index=best, action=actions[best], omega=math.inf, iterations=0, nodes=0,
            omega_trace=[], root_lower=-math.inf, root_upper=math.inf, q_lower=nan,
            q_upper=nan, q_ml=q_ml, q_policy=q_ml, lam=plan.lam, delta=plan.delta,
            theta=theta, samples=plan.samples, fallback=True,
        )

    omega = search.omega
    q_lo = np.array([r.q_lower for r in search.root.records])
    q_hi = np.array([r.q_upper for r in search.root.records])
    fallback_mask = np.abs(q_lo - q_ml) > 2.0 * plan.lam + omega + theta
    q_pol = np.where(fallback_mask, q_ml, q_lo)
    best = argmax_first(q_pol)
    return AnytimeResult(
        index=best, action=actions[best], omega=omega, iterations=done, nodes=search.nodes,
        omega_trace=trace, root_lower=search.root.lower, root_upper=search.root.upper,
        q_lower=q_lo, q_upper=q_hi, q_ml=q_ml, q_policy=q_pol, lam=plan.lam,
        delta=plan.delta, theta=theta, samples=plan.samples, converged=converged,
        conflicts=search.conflicts, max_iteration_nodes=peak,
    )
