from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidInputError

DEFAULT_DELTA = 0.1


@dataclass(frozen=True)
class PlannerConfig:
    """Planner knobs.

    The per-stage sample count is driven by exactly one of: ``samples``
    (pinned ``N``), ``epsilon`` (a policy loss bound), or ``lam`` together
    with ``delta``.  With a pinned ``N``, ``delta`` (default 0.1) is used to
    back out the per-stage error bound ``lam`` by inverting the sample-size
    formula.
    """

    horizon: int = 1
    beta: float = 0.0
    samples: int | None = None
    epsilon: float | None = None
    lam: float | None = None
    delta: float | None = None
    seed: int = 0
    theta_multiplier: float = 1.0
    prefix_cap: int = 200_000
    tree_cap: float = 5e7
    node_cap: float = 5e7
    iterations: int | None = None
    wallclock_ms: float | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.beta < 0:
            raise InvalidInputError("beta must be >= 0")
        drivers = [self.samples is not None, self.epsilon is not None, self.lam is not None]
        if sum(drivers) != 1:
            raise InvalidInputError("set exactly one of samples, epsilon, or (lam, delta)")
        if self.samples is not None and self.samples < 1:
            raise InvalidInputError("samples must be >= 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInputError("epsilon must be > 0")
        if self.lam is not None:
            if not self.lam > 0:
                raise InvalidInputError("lam must be > 0")
            if self.delta is None:
                raise InvalidInputError("lam needs delta")
        if self.delta is not None and not 0 < self.delta < 1:
            raise InvalidInputError("delta must lie in (0, 1)")
        if self.theta_multiplier < 0:
            raise InvalidInputError("theta_multiplier must be >= 0")

    def replace(self, **changes) -> "PlannerConfig":
        from dataclasses import replace

        return replace(self, **changes)
