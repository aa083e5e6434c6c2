"""Episode runner, metrics, experiment configs and CSV output."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .anytime import anytime_policy
from .baselines import db_gp_ucb, greedy_hallucinated_ucb, nonmyopic_ucb_ml
from .environments import (
    CardinalCatalog,
    Environment,
    GraphCatalog,
    GridDomain,
    MacroAction,
    PhenomenonRealization,
    execute,
    load_field,
    load_graph,
    location_key,
    sample_phenomenon,
)
from .errors import InvalidInputError, MacroGPOError, ParseError
from .gp import KernelParams, ObservationSet
from .planner.config import PlannerConfig
from .planner.recursion import epsilon_policy

PLANNER_KINDS = ("epsilon-macro-gpo", "anytime", "db-gp-ucb", "nonmyopic-ucb-ml", "greedy-ucb", "greedy-ei")

METRIC_COLUMNS = ("planner", "seed", "stage", "action_index", "avg_norm_output",
                  "simple_regret", "nodes", "millis")
SUMMARY_COLUMNS = ("planner", "stage", "mean_out", "se_out", "mean_regret", "se_regret")


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class PlannerSpec:
    label: str
    kind: str
    config: PlannerConfig


@dataclass
class SuiteConfig:
    params: KernelParams
    domain: Optional[GridDomain]
    field_file: Optional[str]
    rule: str
    kappa: int
    graph_file: Optional[str]
    downsample: Optional[int]
    downsample_seed: int
    start: Optional[Tuple[float, ...]]
    prior_locations: Tuple[Tuple[float, ...], ...]
    planners: List[PlannerSpec]
    budget: int
    replications: int
    seed: int
    workers: int = 1
    timing: bool = False
    source_text: str = ""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]

    @property
    def stages(self) -> int:
        return self.budget // self.kappa


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _points(text: str) -> Tuple[Tuple[float, ...], ...]:
    """``"x1 y1; x2 y2"`` or ``"x1,y1; x2,y2"``."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            out.append(tuple(float(v) for v in chunk.replace(",", " ").split()))
    return tuple(out)


def _opt(section, key, conv, default=None):
    if key not in section or section[key].strip() == "":
        return default
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ParseError(f"[{section.name}] {key}: {exc}") from exc


def _planner_spec(label: str, section) -> PlannerSpec:
    kind = section.get("kind", "epsilon-macro-gpo").strip()
    if kind not in PLANNER_KINDS:
        raise ParseError(f"[{section.name}] unknown planner kind {kind!r}; expected one of {PLANNER_KINDS}")
    samples = _opt(section, "N", int)
    epsilon = _opt(section, "epsilon", float)
    lam = _opt(section, "lambda", float)
    delta = _opt(section, "delta", float)
    if samples is None and epsilon is None and lam is None:
        samples = 1 if kind in ("db-gp-ucb", "nonmyopic-ucb-ml", "greedy-ucb", "greedy-ei") else None
    try:
        config = PlannerConfig(
            horizon=_opt(section, "H", int, 1),
            beta=_opt(section, "beta", float, 0.0),
            samples=samples,
            epsilon=epsilon,
            lam=lam,
            delta=delta,
            theta_multiplier=_opt(section, "theta_multiplier", float, 1.0),
            prefix_cap=_opt(section, "prefix_cap", int, 200_000),
            tree_cap=_opt(section, "tree_cap", float, 5e7),
            node_cap=_opt(section, "node_cap", float, 5e7),
            iterations=_opt(section, "iterations", int),
            wallclock_ms=_opt(section, "wallclock_ms", float),
        )
    except InvalidInputError as exc:
        raise ParseError(f"[{section.name}] {exc}") from exc
    return PlannerSpec(label=section.get("label", label).strip(), kind=kind, config=config)


def parse_suite_config(text: str, base_dir: Optional[str] = None) -> SuiteConfig:
    """Parse an INI experiment config.

    Sections: ``[kernel]``, ``[domain]``, ``[actions]``, ``[planner]`` and
    ``[suite]``.  Extra planners go in ``[planner:LABEL]`` sections, which
    inherit every key of ``[planner]`` they do not override.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc)) from exc
    for required in ("kernel", "actions", "suite"):
        if not cp.has_section(required):
            raise ParseError(f"missing [{required}] section")

    def path(p):
        if p is None:
            return None
        return p if base_dir is None or os.path.isabs(p) else os.path.join(base_dir, p)

    k = cp["kernel"]
    try:
        params = KernelParams(
            prior_mean=_opt(k, "prior_mean", float, 0.0),
            signal_variance=_opt(k, "signal_variance", float, 1.0),
            noise_variance=_opt(k, "noise_variance", float, 1e-5),
            length_scales=_opt(k, "length_scales", _floats, (0.5, 0.5)),
        )
    except InvalidInputError as exc:
        raise ParseError(f"[kernel] {exc}") from exc

    d = cp["domain"] if cp.has_section("domain") else cp[cp.default_section]
    domain = None
    if "x" in d:
        extent = [_floats(d[ax]) for ax in ("x", "y", "z") if ax in d]
        if any(len(e) != 3 for e in extent):
            raise ParseError("[domain] axes take 'min, max, cells'")
        domain = GridDomain(tuple((lo, hi, int(n)) for lo, hi, n in extent))
    start_text = d.get("start", "center").strip()
    start = None if start_text in ("", "center") else _points(start_text)[0]

    a = cp["actions"]
    rule = a.get("rule", "cardinal").strip()
    if rule not in ("cardinal", "graph"):
        raise ParseError(f"[actions] unknown rule {rule!r}")
    if rule == "cardinal" and domain is None:
        raise ParseError("cardinal actions need [domain] x and y")
    if rule == "graph" and "graph_file" not in a:
        raise ParseError("graph actions need [actions] graph_file")

    base_planner = cp["planner"] if cp.has_section("planner") else None
    planners: List[PlannerSpec] = []
    if base_planner is not None:
        planners.append(_planner_spec(base_planner.get("label", "planner"), base_planner))
    for name in cp.sections():
        if name.startswith("planner:"):
            sec = cp[name]
            merged = dict(base_planner) if base_planner is not None else {}
            merged.pop("label", None)
            merged.update(sec)
            tmp = configparser.ConfigParser(interpolation=None)
            tmp.optionxform = str
            tmp[name] = merged
            planners.append(_planner_spec(name.split(":", 1)[1], tmp[name]))
    if base_planner is not None and len(planners) > 1 and base_planner.get("enabled", "yes").strip() == "no":
        planners = planners[1:]
    if not planners:
        raise ParseError("no planner configured")
    labels = [p.label for p in planners]
    if len(set(labels)) != len(labels):
        raise ParseError(f"duplicate planner labels {labels}")

    s = cp["suite"]
    kappa = _opt(a, "kappa", int, 4)
    budget = _opt(s, "budget", int, 20)
    if kappa < 1 or budget < kappa or budget % kappa:
        raise ParseError(f"budget {budget} must be a positive multiple of kappa {kappa}")
    return SuiteConfig(
        params=params,
        domain=domain,
        field_file=path(d.get("field_file", "").strip() or None),
        rule=rule,
        kappa=kappa,
        graph_file=path(a.get("graph_file", "").strip() or None),
        downsample=_opt(a, "downsample", int),
        downsample_seed=_opt(a, "downsample_seed", int, 0),
        start=start,
        prior_locations=_points(d.get("prior", "")),
        planners=planners,
        budget=budget,
        replications=_opt(s, "replications", int, 1),
        seed=_opt(s, "seed", int, 0),
        workers=_opt(s, "workers", int, 1),
        timing=s.get("timing", "false").strip().lower() in ("1", "true", "yes"),
        source_text=text,
    )


def load_suite_config(path) -> SuiteConfig:
    text = Path(path).read_text()
    return parse_suite_config(text, base_dir=str(Path(path).resolve().parent))


# ---------------------------------------------------------------------------
# Environments


def build_environment(cfg: SuiteConfig, seed: int) -> Environment:
    """The episode environment for one replication seed; identical for every planner."""
    params = cfg.params
    prior = tuple(cfg.prior_locations)
    if cfg.rule == "graph":
        graph = load_graph(cfg.graph_file)
        downsample = None if cfg.downsample is None else (cfg.downsample, cfg.downsample_seed)
        catalog = GraphCatalog(graph, cfg.kappa, downsample)
        nodes = np.asarray(sorted(graph), dtype=float)
        realization = load_field(cfg.field_file) if cfg.field_file else sample_phenomenon(nodes, params, seed)
        if cfg.start is not None:
            start = location_key(cfg.start)
        else:
            centre = nodes.mean(axis=0)
            start = tuple(nodes[int(np.argmin(np.linalg.norm(nodes - centre, axis=1)))])
    else:
        domain = cfg.domain
        catalog = CardinalCatalog(domain, cfg.kappa)
        realization = load_field(cfg.field_file) if cfg.field_file else sample_phenomenon(domain, params, seed)
        if cfg.start is not None:
            start = domain.nearest_cell(cfg.start)
        else:
            centre = [0.5 * (lo + hi) for lo, hi, _ in domain.extent]
            start = domain.nearest_cell(centre)
        prior = tuple(tuple(domain.nearest_cell(p)) for p in prior)
    return Environment(params, catalog, realization, tuple(start), prior)


# ---------------------------------------------------------------------------
# Episodes


@dataclass
class StageRecord:
    stage: int
    action_index: int
    action: MacroAction
    z: np.ndarray
    nodes: int
    millis: float


@dataclass
class EpisodeRecord:
    planner: str
    seed: int
    config_hash: str
    prior_mean: float
    initial: ObservationSet
    stages: List[StageRecord] = field(default_factory=list)

    def measurements(self) -> np.ndarray:
        if not self.stages:
            return np.zeros(0)
        return np.concatenate([s.z for s in self.stages])

    def visited(self) -> np.ndarray:
        parts = [self.initial.locations] + [s.action.as_array() for s in self.stages]
        return np.vstack(parts)


def stage_seed(seed: int, stage: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(stream), int(stage)]).generate_state(1)[0])


def decide(spec: PlannerSpec, data: ObservationSet, env: Environment, seed: int):
    """One planning decision; returns ``(index, action, nodes)``."""
    cfg = spec.config.replace(seed=seed)
    kind = spec.kind
    if kind == "epsilon-macro-gpo":
        d = epsilon_policy(data, env.catalog, env.params, cfg)
        return d.index, d.action, d.nodes
    if kind == "anytime":
        r = anytime_policy(data, env.catalog, env.params, cfg)
        return r.index, r.action, r.nodes
    if kind == "db-gp-ucb":
        d = db_gp_ucb(data, env.catalog, env.params, cfg)
        return d.index, d.action, d.nodes
    if kind == "nonmyopic-ucb-ml":
        d = nonmyopic_ucb_ml(data, env.catalog, env.params, cfg)
        return d.index, d.action, d.nodes
    if kind in ("greedy-ucb", "greedy-ei"):
        d = greedy_hallucinated_ucb(data, env.catalog, env.params, cfg,
                                    scoring="ei" if kind == "greedy-ei" else "ucb")
        return d.index, d.action, d.nodes
    raise InvalidInputError(f"unknown planner kind {kind!r}")


def initial_data(env: Environment) -> ObservationSet:
    """Stage-0 data: noise-free readings at the prior locations and the start."""
    locs = env.initial_locations()
    return ObservationSet(locs, env.realization.values_at(locs), dim=locs.shape[1])


def run_episode(env: Environment, spec: PlannerSpec, seed: int, budget: int,
                config_hash: str = "", timing: bool = False) -> EpisodeRecord:
    """Plan, execute and append observations for ``budget / kappa`` stages.

    Every stage replans from the full history.  The lookahead never runs
    past the remaining budget.
    """
    if budget % env.kappa or budget < env.kappa:
        raise InvalidInputError(f"budget {budget} is not a positive multiple of kappa {env.kappa}")
    data = initial_data(env)
    record = EpisodeRecord(spec.label, seed, config_hash, env.params.prior_mean, data)
    n_stages = budget // env.kappa
    for stage in range(n_stages):
        horizon = min(spec.config.horizon, n_stages - stage)
        step_spec = PlannerSpec(spec.label, spec.kind, spec.config.replace(horizon=horizon))
        t0 = time.perf_counter()
        try:
            index, action, nodes = decide(step_spec, data, env, stage_seed(seed, stage, 0))
        except MacroGPOError as exc:
            raise type(exc)(f"planner {spec.label!r}, seed {seed}, stage {stage}: {exc}") from exc
        millis = (time.perf_counter() - t0) * 1000.0 if timing else 0.0
        rng = np.random.default_rng(stage_seed(seed, stage, 1))
        z = execute(env.realization, action, env.params.noise_variance, rng)
        data = data.extend(action.as_array(), z)
        record.stages.append(StageRecord(stage + 1, index, action, z, int(nodes), millis))
    return record


# ---------------------------------------------------------------------------
# Metrics


def metric_avg_normalized_output(record: EpisodeRecord, prior_mean: Optional[float] = None) -> np.ndarray:
    """Per stage (0 first), the mean of ``z - prior_mean`` over the measurements gathered so far."""
    m0 = record.prior_mean if prior_mean is None else prior_mean
    out = [0.0]
    total, count = 0.0, 0
    for s in record.stages:
        total += float(np.sum(s.z - m0))
        count += s.z.shape[0]
        out.append(total / count)
    return np.asarray(out)


def metric_simple_regret(record: EpisodeRecord, realization: PhenomenonRealization) -> np.ndarray:
    """Per stage (0 first), the field maximum minus the best latent value visited so far."""
    best = float(np.max(realization.values_at(record.initial.locations)))
    out = [realization.global_max - best]
    for s in record.stages:
        best = max(best, float(np.max(realization.values_at(s.action.as_array()))))
        out.append(realization.global_max - best)
    return np.asarray(out)


def metric_rows(record: EpisodeRecord, realization: PhenomenonRealization) -> List[dict]:
    out = metric_avg_normalized_output(record)
    regret = metric_simple_regret(record, realization)
    rows = [dict(planner=record.planner, seed=record.seed, stage=0, action_index=-1,
                 avg_norm_output=out[0], simple_regret=regret[0], nodes=0, millis=0.0)]
    for s in record.stages:
        rows.append(dict(planner=record.planner, seed=record.seed, stage=s.stage,
                         action_index=s.action_index, avg_norm_output=out[s.stage],
                         simple_regret=regret[s.stage], nodes=s.nodes, millis=s.millis))
    return rows


def mean_se(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error (sample standard deviation over sqrt(n)); nan below two values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size < 2:
        return float(v.mean()), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def summarize(rows: Sequence[dict], planners: Sequence[str]) -> List[dict]:
    out = []
    for label in planners:
        mine = [r for r in rows if r["planner"] == label]
        for stage in sorted({r["stage"] for r in mine}):
            at = [r for r in mine if r["stage"] == stage]
            mo, so = mean_se([r["avg_norm_output"] for r in at])
            mr, sr = mean_se([r["simple_regret"] for r in at])
            out.append(dict(planner=label, stage=stage, mean_out=mo, se_out=so,
                            mean_regret=mr, se_regret=sr))
    return out


def _cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def plot_tables(summary: Sequence[dict], planners: Sequence[str]) -> Dict[str, str]:
    """Wide per-figure CSVs: one row per stage, mean and standard-error columns per planner."""
    stages = sorted({r["stage"] for r in summary})
    index = {(r["planner"], r["stage"]): r for r in summary}
    out = {}
    for name, mean_key, se_key in (("plot_avg_output.csv", "mean_out", "se_out"),
                                   ("plot_simple_regret.csv", "mean_regret", "se_regret")):
        cols = ["stage"] + [f"{p}{suffix}" for p in planners for suffix in ("_mean", "_se")]
        rows = []
        for st in stages:
            row = {"stage": st}
            for p in planners:
                r = index.get((p, st))
                row[f"{p}_mean"] = r[mean_key] if r else math.nan
                row[f"{p}_se"] = r[se_key] if r else math.nan
            rows.append(row)
        out[name] = to_csv(rows, cols)
    return out


# ---------------------------------------------------------------------------
# Suites


@dataclass
class SuiteResult:
    config: SuiteConfig
    records: List[EpisodeRecord]
    rows: List[dict]
    summary: List[dict]
    files: Dict[str, str]


def _run_one(job):
    cfg, spec_index, seed = job
    env = build_environment(cfg, seed)
    spec = cfg.planners[spec_index]
    rec = run_episode(env, spec, seed, cfg.budget, cfg.config_hash, cfg.timing)
    return rec, metric_rows(rec, env.realization)


def run_suite(cfg, out_dir=None, workers: Optional[int] = None) -> SuiteResult:
    """Every planner on every replication seed; realizations are shared across planners.

    Output rows are ordered by (planner as configured, seed) whatever the worker count.
    """
    if not isinstance(cfg, SuiteConfig):
        cfg = load_suite_config(cfg)
    workers = cfg.workers if workers is None else workers
    seeds = [cfg.seed + r for r in range(cfg.replications)]
    jobs = [(cfg, i, s) for i in range(len(cfg.planners)) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    records = [r for r, _ in results]
    rows = [row for _, rs in results for row in rs]
    labels = [p.label for p in cfg.planners]
    summary = summarize(rows, labels)
    files = {"metrics.csv": to_csv(rows, METRIC_COLUMNS),
             "summary.csv": to_csv(summary, SUMMARY_COLUMNS)}
    files.update(plot_tables(summary, labels))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
    return SuiteResult(cfg, records, rows, summary, files)


def sign_test(a: Sequence[float], b: Sequence[float]) -> Tuple[int, int, float]:
    """One-sided paired sign test of ``a > b``; ties dropped.  Returns (wins, losses, p)."""
    from scipy.stats import binomtest

    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    wins = int(np.sum(diff > 0))
    losses = int(np.sum(diff < 0))
    if wins + losses == 0:
        return 0, 0, 1.0
    return wins, losses, float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
