"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from macrogpo.anytime import anytime_policy, iteration_node_cap
from macrogpo.environments import CardinalCatalog, GridDomain
from macrogpo.gp import KernelParams, ObservationSet, posterior
from macrogpo.harness import load_suite_config, run_suite, sign_test
from macrogpo.planner import (
    PlannerConfig,
    SampledRecursion,
    alpha,
    build_tables,
    epsilon_policy,
    make_problem,
    reward,
    seeded_innovations,
)

from conftest import line_instance
from oracles import DenseGP, QuadratureOracle

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "plankton_desk.ini"


def dense(p):
    return DenseGP(p.prior_mean, p.signal_variance, p.noise_variance, p.length_scales)


def random_params(rng):
    return KernelParams(
        prior_mean=float(rng.normal(0, 1)),
        signal_variance=float(rng.uniform(0.2, 3.0)),
        noise_variance=float(rng.uniform(1e-4, 0.3)),
        length_scales=tuple(float(v) for v in rng.uniform(0.3, 3.0, size=2)),
    )


def random_grid_instance(seed, kappa):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    dom = GridDomain(((0, 13, 13), (0, 13, 13)))
    n = int(rng.integers(1, 8))
    locs = [dom.location(tuple(rng.integers(0, 13, size=2))) for _ in range(n)] + [dom.location((6, 6))]
    z = p.prior_mean + math.sqrt(p.signal_variance) * rng.normal(size=len(locs))
    return p, CardinalCatalog(dom, kappa), ObservationSet(locs, z), rng


def test_criterion_1_gp_oracle_equivalence(report):
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(50):
        p = random_params(rng)
        n = int(rng.integers(0, 21))
        X = rng.uniform(0, 5, size=(n, 2))
        z = p.prior_mean + rng.normal(size=n)
        T = rng.uniform(0, 5, size=(int(rng.integers(1, 6)), 2))
        b = posterior(T, ObservationSet(X, z, dim=2), p)
        m, c = dense(p).posterior(X, z, T)
        worst = max(worst, np.max(np.abs(b.mean - m)), np.max(np.abs(b.covariance - c)))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-8 and secs < 5
    report(1, ok, f"max elementwise error {worst:.2e}, {secs:.2f} s")
    assert ok


def test_criterion_2_reward_lipschitz(report):
    violations, worst = 0, -math.inf
    for k in range(200):
        kappa = 1 + k % 5
        p, cat, data, rng = random_grid_instance(1000 + k, kappa)
        acts = cat(tuple(data.locations[-1]))
        act = acts[int(rng.integers(len(acts)))]
        beta = float(rng.uniform(0, 5))
        z2 = data.measurements + rng.normal(scale=rng.uniform(0.01, 3), size=len(data))
        other = ObservationSet(data.locations, z2)
        gap = abs(reward(act, data, p, beta) - reward(act, other, p, beta))
        bound = math.sqrt(kappa) * alpha(data.locations, act.as_array(), p) * np.linalg.norm(z2 - data.measurements)
        violations += gap > bound + 1e-9
        worst = max(worst, gap - bound)
    ok = violations == 0
    report(2, ok, f"{violations} violations over 200 pairs, max(gap - bound) {worst:.2e}")
    assert ok


def _theta_nodes(tables, oracle, data, t, prefix, X, z, out):
    """Compare most-likely and quadrature action values at this node, then recurse
    into children at a spread of plausible measurements."""
    pb = tables.problem
    q_ml = tables.most_likely.q_values(prefix, z)
    q_star = oracle.q(X, z, t)
    out.append(float(np.max(np.abs(q_ml - q_star)) - tables.theta.at(t)))
    if t + 1 >= pb.horizon:
        return
    for i, act in enumerate(pb.actions(prefix)):
        T = act.as_array()
        mu = pb.mean(prefix, i, z)[0]
        sd = abs(float(pb.action_geometry(prefix, i).chol[0, 0]))
        for c in (-2.0, -0.7, 0.0, 0.7, 2.0):
            _theta_nodes(tables, oracle, data, t + 1, prefix + (i,), np.vstack([X, T]),
                         np.append(z, mu + c * sd), out)


def test_criterion_3_theta_validity(report):
    excess = []
    for k in range(20):
        H = 2 if k < 10 else 3
        p, cat, data = line_instance(300 + k)
        tables = build_tables(make_problem(data, cat, p, PlannerConfig(horizon=H, samples=1)))
        oracle = QuadratureOracle(dense(p), cat, horizon=H, nodes=60)
        _theta_nodes(tables, oracle, data, 0, (), data.locations, data.measurements, excess)
    violations = sum(e > 1e-9 for e in excess)
    ok = violations == 0
    report(3, ok, f"{violations} violations at {len(excess)} nodes, max(|gap| - theta) {max(excess):.3g}")
    assert ok


def test_criterion_4_monte_carlo_convergence(report):
    p, cat, data = line_instance(4, noise=(0.05, 0.05), length=(1.5, 1.5))
    q_star = QuadratureOracle(dense(p), cat, horizon=2).q(data.locations, data.measurements)
    pb = make_problem(data, cat, p, PlannerConfig(horizon=2, samples=1))
    t0 = time.perf_counter()
    errs = {}
    for n in (400, 6400):
        errs[n] = np.median([
            np.max(np.abs(SampledRecursion(pb, n, seeded_innovations(s)).q((), pb.root_z) - q_star))
            for s in range(50)
        ])
    secs = time.perf_counter() - t0
    ratio = errs[6400] / errs[400]
    ok = ratio < 0.6 and secs < 120
    report(4, ok, f"median error {errs[400]:.3g} at N=400, {errs[6400]:.3g} at N=6400, "
                  f"ratio {ratio:.3f}, {secs:.1f} s")
    assert ok


def test_criterion_5_one_stage_equivalence(report):
    mismatches = 0
    for k in range(100):
        p, cat, data, rng = random_grid_instance(5000 + k, 1 + k % 4)
        beta = float(rng.uniform(0, 3)) if k % 2 else 0.0
        cfg = PlannerConfig(horizon=1, samples=int(rng.integers(1, 10)), beta=beta, seed=k)
        d = epsilon_policy(data, cat, p, cfg)
        R = [reward(a, data, p, beta) for a in cat(tuple(data.locations[-1]))]
        mismatches += d.index != int(np.argmax(R))
    ok = mismatches == 0
    report(5, ok, f"{mismatches} mismatches over 100 instances")
    assert ok


def test_criterion_6_anytime_soundness(report):
    bad_order = bad_omega = bad_action = 0
    for k in range(20):
        p, cat, data = line_instance(600 + k)
        cfg = PlannerConfig(horizon=2, samples=5, seed=k, iterations=100_000)
        order = []

        def check(search):
            order.append(search.root.lower <= search.root.upper + 1e-12)

        r = anytime_policy(data, cat, p, cfg, on_iteration=check)
        e = epsilon_policy(data, cat, p, cfg)
        bad_order += not all(order)
        bad_omega += any(b > a for a, b in zip(r.omega_trace[:-1], r.omega_trace[1:]))
        bad_action += not (r.converged and r.index == e.index)
    ok = bad_order == bad_omega == bad_action == 0
    report(6, ok, f"bound order failures {bad_order}, omega increases {bad_omega}, "
                  f"action mismatches {bad_action} over 20 instances")
    assert ok


def test_criterion_7_anytime_sandwich(report):
    inside, runs = 0, 0
    for k in range(20):
        p, cat, data = line_instance(600 + k)
        v_star = QuadratureOracle(dense(p), cat, horizon=2).value(data.locations, data.measurements)
        for rep in range(10):
            cfg = PlannerConfig(horizon=2, samples=5, delta=0.1, seed=1000 * k + rep, iterations=100_000)
            r = anytime_policy(data, cat, p, cfg)
            inside += r.root_lower <= v_star <= r.root_upper
            runs += 1
    rate = inside / runs
    ok = rate >= 0.85
    report(7, ok, f"V* inside the root bounds in {inside}/{runs} runs ({rate:.1%})")
    assert ok


def _final_outputs(res, label):
    final = res.config.stages
    return {r["seed"]: r["avg_norm_output"] for r in res.rows
            if r["planner"] == label and r["stage"] == final}


def _desk_suite(labels, **overrides):
    cfg = load_suite_config(DESK_CONFIG)
    cfg.planners = [p for p in cfg.planners if p.label in labels]
    cfg.planners = [type(p)(p.label, p.kind, p.config.replace(**overrides)) for p in cfg.planners]
    cfg.replications, cfg.seed = 50, 0
    return cfg


def test_criterion_8_desk_scale_lookahead(report):
    t0 = time.perf_counter()
    cfg = _desk_suite({"emgpo-h3"})
    h1 = type(cfg.planners[0])("emgpo-h1", "epsilon-macro-gpo", cfg.planners[0].config.replace(horizon=1))
    cfg.planners.append(h1)
    res = run_suite(cfg)
    a, b = _final_outputs(res, "emgpo-h3"), _final_outputs(res, "emgpo-h1")
    seeds = sorted(a)
    wins, losses, pval = sign_test([a[s] for s in seeds], [b[s] for s in seeds])
    secs = time.perf_counter() - t0
    ok = pval < 0.1 and secs < 1800
    report(8, ok, f"H=3 mean {np.mean(list(a.values())):.4f} vs H=1 {np.mean(list(b.values())):.4f}, "
                  f"{wins} wins / {losses} losses, one-sided p {pval:.3f}, {secs:.0f} s")
    assert ok


def test_criterion_9_beta_direction(report):
    cfg = _desk_suite({"emgpo-h2"}, beta=0.0)
    spec = cfg.planners[0]
    cfg.planners = [type(spec)("beta-0", spec.kind, spec.config),
                    type(spec)("beta-10", spec.kind, spec.config.replace(beta=10.0))]
    res = run_suite(cfg)
    a, b = _final_outputs(res, "beta-0"), _final_outputs(res, "beta-10")
    seeds = sorted(a)
    wins, losses, pval = sign_test([a[s] for s in seeds], [b[s] for s in seeds])
    lower = np.mean(list(b.values())) < np.mean(list(a.values()))
    ok = lower and pval < 0.1
    report(9, ok, f"beta=0 mean {np.mean(list(a.values())):.4f} vs beta=10 {np.mean(list(b.values())):.4f}, "
                  f"{wins} wins / {losses} losses, one-sided p {pval:.2e}")
    assert ok


def test_criterion_10_node_accounting(report):
    p, cat, data = line_instance(10)
    cfg = PlannerConfig(horizon=2, samples=2, seed=3)
    # stage 0: 2 actions x 2 samples; stage 1: 4 nodes x 2 actions, rewards only
    hand = 2 * 2 + (2 * 2) * 2
    d = epsilon_policy(data, cat, p, cfg)
    r = anytime_policy(data, cat, p, cfg.replace(iterations=1000))
    cap = 2 * 2 * 2
    ok = d.nodes == hand and r.max_iteration_nodes <= cap and iteration_node_cap(2, 2, 2) == cap
    report(10, ok, f"exact counter {d.nodes} vs hand {hand}; anytime peak growth "
                   f"{r.max_iteration_nodes} vs cap A*N*H = {cap}")
    assert ok
