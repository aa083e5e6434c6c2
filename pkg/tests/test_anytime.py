from __future__ import annotations


import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from macrogpo.anytime import AnytimeSearch, SearchNode, anytime_policy, iteration_node_cap
from macrogpo.environments import ExplicitCatalog, MacroAction
from macrogpo.errors import InvalidInputError
from macrogpo.gp import KernelParams, ObservationSet
from macrogpo.planner import PlannerConfig, SampledRecursion, epsilon_policy, preprocess, seeded_innovations
from macrogpo.planner.recursion import resolve_sampling

from conftest import line_instance


def search_for(seed, H=2, N=5, lam=0.3, **kw):
    p, cat, data = line_instance(seed, **kw)
    tables = preprocess(data, cat, p, PlannerConfig(horizon=H, samples=N, seed=seed))
    return AnytimeSearch(tables, N, lam, seeded_innovations(seed)), tables


def all_nodes(node):
    yield node
    for rec in node.records:
        for c in rec.children:
            yield from all_nodes(c)


def test_terminal_node_is_zero():
    s, _ = search_for(0)
    leaf = SearchNode(prefix=(0, 0), key=(0, 0, 0, 0), z=np.zeros(6))
    assert s.expand_tree(leaf) == (0.0, 0.0)


def test_one_stage_bounds_are_reward_plus_minus_lambda():
    s, t = search_for(1, H=1, lam=0.25)
    s.expand_tree(s.root)
    R = [t.problem.reward((), i, t.problem.root_z) for i in range(2)]
    assert s.root.lower == pytest.approx(max(R) - 0.25)
    assert s.root.upper == pytest.approx(max(R) + 0.25)


class NoRefine(AnytimeSearch):
    def refine_bounds(self, node, index, anchor):
        pass


def test_children_start_at_most_likely_value_plus_minus_theta():
    p, cat, data = line_instance(2)
    tables = preprocess(data, cat, p, PlannerConfig(horizon=3, samples=4))
    s = NoRefine(tables, 4, 0.1, seeded_innovations(2))
    s.expand_tree(s.root)
    theta1 = tables.theta.at(1)
    checked = 0
    for i, rec in enumerate(s.root.records):
        for child in rec.children:
            if child.explored:
                continue
            v = tables.most_likely.value((i,), child.z)
            assert child.lower == pytest.approx(v - theta1, abs=1e-12)
            assert child.upper == pytest.approx(v + theta1, abs=1e-12)
            checked += 1
    assert checked == 2 * 3


def _fixture_node(samples, lowers, uppers, L):
    s, t = search_for(3)
    s.tables.lipschitz.values[(0,)] = L
    node = SearchNode(prefix=(), key=(), z=t.problem.root_z, explored=True)
    from macrogpo.anytime import ActionRecord

    kids = [SearchNode((0,), (0, l), np.zeros(5), lower=lo, upper=hi, explored=True)
            for l, (lo, hi) in enumerate(zip(lowers, uppers))]
    node.records.append(ActionRecord(0.0, np.asarray(samples, dtype=float).reshape(-1, 1), kids))
    return s, node


def test_refine_same_index_is_noop():
    s, node = _fixture_node([[0.0], [1.0]], [0.0, -5.0], [1.0, 5.0], 2.0)
    before = [(c.lower, c.upper) for c in node.records[0].children]
    s.refine_bounds(node, 0, 0)
    assert node.records[0].children[0].lower == before[0][0]
    assert node.records[0].children[0].upper == before[0][1]


def test_refine_duplicate_sample_clamps_to_anchor():
    s, node = _fixture_node([[0.3], [0.3]], [0.0, -5.0], [1.0, 5.0], 2.0)
    s.refine_bounds(node, 0, 0)
    kid = node.records[0].children[1]
    assert (kid.lower, kid.upper) == (0.0, 1.0)


def test_refine_hand_arithmetic():
    # b = L * |z1 - z0| = 2 * 0.5 = 1; lower = max(-5, 0 - 1) = -1; upper = min(5, 1 + 1) = 2
    s, node = _fixture_node([[0.0], [0.5]], [0.0, -5.0], [1.0, 5.0], 2.0)
    s.refine_bounds(node, 0, 0)
    kid = node.records[0].children[1]
    assert (kid.lower, kid.upper) == (-1.0, 2.0)
    s.refine_bounds(node, 0, 0)
    assert (kid.lower, kid.upper) == (-1.0, 2.0)


def test_refine_never_widens():
    s, node = _fixture_node([[0.0], [3.0]], [0.0, 0.2], [1.0, 0.4], 2.0)
    s.refine_bounds(node, 0, 0)
    kid = node.records[0].children[1]
    assert (kid.lower, kid.upper) == (0.2, 0.4)


def test_first_construct_equals_expand():
    a, _ = search_for(4, H=3, N=3)
    b, _ = search_for(4, H=3, N=3)
    a.construct_tree(a.root)
    b.expand_tree(b.root)
    assert (a.root.lower, a.root.upper, a.nodes) == (b.root.lower, b.root.upper, b.nodes)


def test_descent_skips_zero_gap_children():
    s, _ = search_for(5, H=3, N=4)
    s.iterate()
    best = int(np.argmax([r.q_lower for r in s.root.records]))
    kids = s.root.records[best].children
    for k in kids:
        k.lower = k.upper = 0.5 * (k.lower + k.upper)
    kids[-1].lower -= 1.0
    explored = [k.explored for k in kids]
    s.iterate()
    for k, was in zip(kids[:-1], explored[:-1]):
        assert k.explored == was
    assert kids[-1].explored


@pytest.mark.parametrize("seed", range(5))
def test_bounds_bracket_exhaustive_sampled_value(seed):
    s, t = search_for(seed, H=2, N=3, lam=0.2)
    for _ in range(20):
        s.iterate()
    exact = SampledRecursion(t.problem, 3, seeded_innovations(seed)).value((), t.problem.root_z)
    assert s.root.lower - 1e-9 <= exact <= s.root.upper + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_full_expansion_reproduces_sampled_values(seed):
    s, t = search_for(seed, H=2, N=4, lam=0.2)
    s.expand_all()
    q = SampledRecursion(t.problem, 4, seeded_innovations(seed)).q((), t.problem.root_z)
    np.testing.assert_allclose([r.q_lower for r in s.root.records], q - 0.2, atol=1e-9)
    np.testing.assert_allclose([r.q_upper for r in s.root.records], q + 0.2, atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_anytime_matches_exact_policy_when_converged(seed):
    p, cat, data = line_instance(seed)
    cfg = PlannerConfig(horizon=2, samples=5, seed=seed, iterations=10_000)
    a = anytime_policy(data, cat, p, cfg)
    e = epsilon_policy(data, cat, p, cfg)
    assert a.converged and a.index == e.index


def test_single_action_after_one_iteration():
    p = KernelParams(length_scales=(1.0, 1.0))
    cat = ExplicitCatalog({(0.0, 0.0): [MacroAction(((0.6, 0.0),))]}, 1)
    r = anytime_policy(ObservationSet([[0.0, 0.0]], [0.1]), cat, p,
                       PlannerConfig(horizon=1, samples=2, iterations=1))
    assert r.index == 0 and r.iterations == 1


@given(st.integers(0, 5000), st.integers(2, 3), st.integers(1, 6))
def test_omega_trace_and_node_bounds_monotone(seed, H, N):
    p, cat, data = line_instance(seed)
    history = {}

    def check(search):
        for node in all_nodes(search.root):
            lo, hi = node.lower, node.upper
            assert lo <= hi + 1e-9
            old = history.get(id(node))
            if old is not None:
                assert lo >= old[0] - 1e-9 and hi <= old[1] + 1e-9
            history[id(node)] = (lo, hi)

    r = anytime_policy(data, cat, p, PlannerConfig(horizon=H, samples=N, seed=seed, iterations=30),
                       on_iteration=check)
    assert all(b <= a + 1e-9 for a, b in zip(r.omega_trace[:-1], r.omega_trace[1:]))
    assert r.max_iteration_nodes <= iteration_node_cap(2, N, H)


def test_zero_budget_falls_back_to_most_likely():
    p, cat, data = line_instance(7)
    r = anytime_policy(data, cat, p, PlannerConfig(horizon=2, samples=3), iterations=0)
    assert r.fallback and r.iterations == 0
    assert r.index == int(np.argmax(r.q_ml))


def test_budget_is_required():
    p, cat, data = line_instance(7)
    with pytest.raises(InvalidInputError):
        anytime_policy(data, cat, p, PlannerConfig(horizon=2, samples=3))


def test_wallclock_budget_runs_at_least_one_iteration():
    p, cat, data = line_instance(8)
    r = anytime_policy(data, cat, p, PlannerConfig(horizon=3, samples=4, wallclock_ms=1e-6))
    assert r.iterations >= 1


def test_deterministic_per_seed_and_budget():
    p, cat, data = line_instance(9)
    cfg = PlannerConfig(horizon=3, samples=4, seed=3, iterations=7)
    a = anytime_policy(data, cat, p, cfg)
    b = anytime_policy(data, cat, p, cfg)
    assert a.omega_trace == b.omega_trace and a.index == b.index and a.nodes == b.nodes


def test_geometry_cache_is_never_missed_after_preprocess():
    p, cat, data = line_instance(10)
    cfg = PlannerConfig(horizon=3, samples=4, iterations=50)
    tables = preprocess(data, cat, p, cfg)
    misses = tables.problem.cache_misses
    anytime_policy(data, cat, p, cfg, tables=tables)
    assert tables.problem.cache_misses == misses
    assert tables.problem.cache_hits > 0


def test_node_cap_stops_gracefully():
    p, cat, data = line_instance(11)
    r = anytime_policy(data, cat, p, PlannerConfig(horizon=3, samples=4, node_cap=10, iterations=100))
    assert r.iterations == 1 and r.nodes >= 10


def test_loss_bound_mode_parameters():
    p, cat, data = line_instance(12)
    cfg = PlannerConfig(horizon=2, epsilon=5.0, iterations=3)
    tables = preprocess(data, cat, p, cfg)
    plan = resolve_sampling(cfg, tables, anytime=True)
    theta = tables.theta.theta
    assert plan.lam == pytest.approx(1.0 / (4 * 2 / 5.0 + 1.0 / (2 * theta)))
    assert plan.delta == pytest.approx(min(0.5, 5.0 / (8 * theta * 2)))


def test_iteration_cap_formula():
    assert iteration_node_cap(2, 2, 2) == 8 == 2 * 2 * 2
    assert iteration_node_cap(4, 10, 1) == 4
    assert iteration_node_cap(2, 5, 3) == 2 * 5 + 4 * 5 + 8
