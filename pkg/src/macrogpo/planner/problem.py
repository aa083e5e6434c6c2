"""Measurement-independent geometry of a planning problem.

Posterior covariances, regression weights and their Cholesky factors
depend only on *where* observations are taken, never on their values.
A node of any lookahead tree is therefore identified, for geometry
purposes, by its prefix: the tuple of action indices taken since the
root.  :class:`PlanningProblem` caches one :class:`PrefixGeometry` per
prefix, each grown from its parent by a block Cholesky update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from ..environments import MacroAction, MacroActionCatalog
from ..errors import CapabilityError, InvalidInputError
from ..gp import ConditioningFactor, KernelParams, ObservationSet, cholesky, log_det_gain

Prefix = Tuple[int, ...]

DEFAULT_PREFIX_CAP = 200_000


@dataclass
class ActionGeometry:
    """Belief geometry for one macro-action taken after a given prefix."""

    action: MacroAction
    weights: np.ndarray          # (kappa, n) regression weights K_as K_ss^{-1}
    covariance: np.ndarray       # (kappa, kappa) posterior covariance of z
    chol: np.ndarray             # lower factor of covariance
    projection: np.ndarray       # (n, kappa) L^{-1} K_sa, reused by the child factor
    info_gain: float
    weight_sum: np.ndarray = field(init=False)
    alpha: float = field(init=False)
    trace: float = field(init=False)

    def __post_init__(self):
        self.weight_sum = self.weights.sum(axis=0)
        self.alpha = float(np.linalg.norm(self.weights))
        self.trace = float(np.trace(self.covariance))


@dataclass
class PrefixGeometry:
    prefix: Prefix
    factor: ConditioningFactor
    actions: Tuple[MacroAction, ...]
    _children: Dict[int, ActionGeometry] = field(default_factory=dict, repr=False)

    @property
    def stage(self) -> int:
        return len(self.prefix)

    @property
    def anchor(self) -> Tuple[float, ...]:
        return tuple(self.factor.locations[-1])

    @property
    def size(self) -> int:
        return len(self.factor)


class PlanningProblem:
    """One planning decision: root data, move model, horizon and exploration weight."""

    def __init__(self, data: ObservationSet, catalog: MacroActionCatalog, params: KernelParams,
                 horizon: int, beta: float = 0.0, prefix_cap: int = DEFAULT_PREFIX_CAP):
        if horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if len(data) == 0:
            raise InvalidInputError("planning needs stage-0 data ending at the agent's location")
        if beta < 0:
            raise InvalidInputError("beta must be >= 0")
        self.data = data
        self.catalog = catalog
        self.params = params
        self.horizon = int(horizon)
        self.beta = float(beta)
        self.kappa = catalog.kappa
        self.prefix_cap = int(prefix_cap)
        self.root_z = np.asarray(data.measurements, dtype=float)
        self._geometry: Dict[Prefix, PrefixGeometry] = {}
        self.cache_hits = 0
        self.cache_misses = 0
        root = ConditioningFactor(params, data.locations)
        self._geometry[()] = PrefixGeometry((), root, catalog(tuple(data.locations[-1])))

    # -- geometry ---------------------------------------------------------

    def geometry(self, prefix: Prefix) -> PrefixGeometry:
        geo = self._geometry.get(prefix)
        if geo is not None:
            self.cache_hits += 1
            return geo
        self.cache_misses += 1
        if len(self._geometry) >= self.prefix_cap:
            raise CapabilityError(
                f"more than {self.prefix_cap} reachable prefixes; reduce the horizon or the action count"
            )
        parent = self.geometry(prefix[:-1])
        act = self.action_geometry(prefix[:-1], prefix[-1])
        n, k = parent.size, self.kappa
        chol = np.zeros((n + k, n + k))
        chol[:n, :n] = parent.factor.chol
        chol[n:, :n] = act.projection.T
        chol[n:, n:] = act.chol
        factor = ConditioningFactor(
            self.params, np.vstack([parent.factor.locations, act.action.as_array()]), chol
        )
        geo = PrefixGeometry(prefix, factor, self.catalog(act.action.end))
        self._geometry[prefix] = geo
        return geo

    def actions(self, prefix: Prefix) -> Tuple[MacroAction, ...]:
        return self.geometry(prefix).actions

    def action_geometry(self, prefix: Prefix, index: int) -> ActionGeometry:
        geo = self.geometry(prefix)
        hit = geo._children.get(index)
        if hit is not None:
            return hit
        action = geo.actions[index]
        V, prior_block = geo.factor.project(action.as_array())
        cov = prior_block - V.T @ V
        cov = 0.5 * (cov + cov.T)
        if geo.size:
            W = solve_triangular(geo.factor.chol.T, V, lower=False, check_finite=False).T
        else:
            W = np.zeros((self.kappa, 0))
        hit = ActionGeometry(
            action=action,
            weights=W,
            covariance=cov,
            chol=cholesky(cov, self.params),
            projection=V,
            info_gain=log_det_gain(cov, self.params.noise_variance),
        )
        geo._children[index] = hit
        return hit

    def prefixes(self, max_len: int | None = None) -> Iterator[Prefix]:
        """Depth-first enumeration of reachable prefixes of length ``0..max_len``."""
        max_len = self.horizon if max_len is None else max_len
        count = 0
        stack: List[Prefix] = [()]
        while stack:
            p = stack.pop()
            count += 1
            if count > self.prefix_cap:
                raise CapabilityError(
                    f"more than {self.prefix_cap} reachable prefixes; reduce the horizon or the action count"
                )
            yield p
            if len(p) < max_len:
                n_act = len(self.actions(p))
                stack.extend(p + (i,) for i in reversed(range(n_act)))

    def prepare(self) -> int:
        """Build every prefix geometry up to the horizon; returns the prefix count."""
        total = 0
        for p in self.prefixes(self.horizon):
            total += 1
            if len(p) < self.horizon:
                for i in range(len(self.actions(p))):
                    self.action_geometry(p, i)
        return total

    @property
    def max_actions(self) -> int:
        return max(1, max(len(self.actions(p)) for p in self.prefixes(self.horizon - 1)))

    # -- value helpers ----------------------------------------------------

    def mean(self, prefix: Prefix, index: int, z: np.ndarray) -> np.ndarray:
        """Posterior mean of the action's outputs; ``z`` may be ``(n,)`` or ``(m, n)``."""
        act = self.action_geometry(prefix, index)
        m0 = self.params.prior_mean
        return m0 + (np.asarray(z) - m0) @ act.weights.T

    def reward(self, prefix: Prefix, index: int, z: np.ndarray):
        """Stage reward: sum of posterior means plus ``beta`` times the info gain."""
        act = self.action_geometry(prefix, index)
        m0 = self.params.prior_mean
        return (self.kappa * m0 + (np.asarray(z) - m0) @ act.weight_sum) + self.beta * act.info_gain
