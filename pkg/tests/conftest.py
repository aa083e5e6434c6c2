from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from macrogpo.environments import CardinalCatalog, GridDomain
from macrogpo.gp import KernelParams, ObservationSet

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_ACCEPTANCE_LINES: list = []


def line_instance(seed, n_prior=3, cells=11, noise=(0.01, 0.3), length=(0.8, 3.0)):
    """A single-row grid walked one cell at a time: two actions (east, west) away from the walls.

    Returns ``(params, catalog, data)``; the agent sits in the middle cell.
    """
    rng = np.random.default_rng(seed)
    params = KernelParams(
        prior_mean=float(rng.normal(0, 0.3)),
        signal_variance=float(rng.uniform(0.5, 2.0)),
        noise_variance=float(rng.uniform(*noise)),
        length_scales=(float(rng.uniform(*length)), 1.0),
    )
    domain = GridDomain(((0.0, float(cells), cells), (0.0, 1.0, 1)))
    catalog = CardinalCatalog(domain, 1)
    mid = cells // 2
    cols = list(rng.choice([c for c in range(cells) if c != mid], size=n_prior, replace=False)) + [mid]
    locs = [[c + 0.5, 0.5] for c in cols]
    z = params.prior_mean + np.sqrt(params.signal_variance) * rng.normal(size=len(locs))
    return params, catalog, ObservationSet(locs, z)


@pytest.fixture
def report():
    """Collects one line per acceptance criterion for the terminal summary."""

    def add(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
