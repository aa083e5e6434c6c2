"""Command-line entry point: ``macrogpo {simulate,plan,run,bench,tables}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


from .environments import save_field
from .errors import MacroGPOError, ParseError
from .gp import ObservationSet
from .harness import (
    METRIC_COLUMNS,
    build_environment,
    decide,
    initial_data,
    load_suite_config,
    metric_rows,
    run_episode,
    run_suite,
    to_csv,
)
from .planner.recursion import make_problem, resolve_sampling
from .planner.tables import build_tables


def _with_budget(cfg, args):
    """Apply --iterations / --wallclock-ms to every planner of the suite."""
    if args.iterations is None and args.wallclock_ms is None:
        return cfg
    changes = {}
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    if args.wallclock_ms is not None:
        changes["wallclock_ms"] = args.wallclock_ms
    cfg.planners = [type(p)(p.label, p.kind, p.config.replace(**changes)) for p in cfg.planners]
    return cfg


def _pick_planner(cfg, label):
    if label is None:
        return cfg.planners[0]
    for p in cfg.planners:
        if p.label == label:
            return p
    raise ParseError(f"no planner labelled {label!r}; have {[p.label for p in cfg.planners]}")


def _read_data(path, dim):
    """CSV with header ``x,y,...,z``; the last row is the agent's current location."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ParseError("data file needs a header and at least one row", path=str(path))
    locs, zs = [], []
    for n, row in enumerate(rows[1:], start=2):
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(str(exc), line=n, path=str(path)) from exc
        if len(vals) != dim + 1:
            raise ParseError(f"expected {dim + 1} columns, got {len(vals)}", line=n, path=str(path))
        locs.append(vals[:dim])
        zs.append(vals[dim])
    return ObservationSet(locs, zs, dim=dim)


def cmd_simulate(args):
    cfg = load_suite_config(args.config)
    env = build_environment(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"field_{args.seed}.csv"
    save_field(path, env.realization)
    print(path)


def cmd_plan(args):
    cfg = _with_budget(load_suite_config(args.config), args)
    env = build_environment(cfg, args.seed)
    data = _read_data(args.data, cfg.params.dim) if args.data else initial_data(env)
    spec = _pick_planner(cfg, args.planner)
    index, action, nodes = decide(spec, data, env, args.seed)
    print(json.dumps({"planner": spec.label, "action_index": index,
                      "path": [list(p) for p in action.path], "nodes": nodes}))


def cmd_run(args):
    cfg = _with_budget(load_suite_config(args.config), args)
    env = build_environment(cfg, args.seed)
    spec = _pick_planner(cfg, args.planner)
    rec = run_episode(env, spec, args.seed, cfg.budget, cfg.config_hash, cfg.timing)
    text = to_csv(metric_rows(rec, env.realization), METRIC_COLUMNS)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(text)
    sys.stdout.write(text)


def cmd_bench(args):
    cfg = _with_budget(load_suite_config(args.config), args)
    if args.seed is not None:
        cfg.seed = args.seed
    res = run_suite(cfg, args.out, workers=args.workers)
    sys.stdout.write(res.files["summary.csv"])


def cmd_tables(args):
    cfg = load_suite_config(args.config)
    env = build_environment(cfg, args.seed)
    data = _read_data(args.data, cfg.params.dim) if args.data else initial_data(env)
    spec = _pick_planner(cfg, args.planner)
    tables = build_tables(make_problem(data, env.catalog, env.params, spec.config),
                          spec.config.theta_multiplier)
    exact = resolve_sampling(spec.config, tables)
    report = {
        "planner": spec.label,
        "horizon": spec.config.horizon,
        "prefixes": tables.prefix_count,
        "max_actions": tables.max_actions,
        "L0": tables.lipschitz[()],
        "theta_stages": list(tables.theta.stages),
        "theta": tables.theta.theta,
        "K": tables.K,
        "N": exact.samples,
        "lambda": exact.lam,
        "delta": exact.delta,
    }
    if spec.kind == "anytime":
        any_plan = resolve_sampling(spec.config, tables, anytime=True)
        report.update(anytime_N=any_plan.samples, anytime_lambda=any_plan.lam)
    print(json.dumps(report, indent=2))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macrogpo", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--planner", help="planner label (default: first configured)")
        p.add_argument("--iterations", type=int, help="anytime iteration budget")
        p.add_argument("--wallclock-ms", type=float, help="anytime wallclock budget")

    p = sub.add_parser("simulate", help="sample a ground-truth field and write it as CSV")
    common(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="one planning decision")
    common(p)
    p.add_argument("--data", help="observation CSV (x,y,z); default: the start reading")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="one episode, metrics CSV on stdout")
    common(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="every planner on every replication seed")
    common(p, seed_default=None)
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tables", help="dump Lipschitz, theta, K and sample-size diagnostics")
    common(p)
    p.add_argument("--data")
    p.set_defaults(func=cmd_tables)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MacroGPOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
