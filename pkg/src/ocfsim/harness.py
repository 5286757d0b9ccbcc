"""Event-driven simulation, Monte-Carlo benchmarking, and invariant checks.

simulate() advances time through the distinct release epochs: at each epoch it
freezes every route prefix already executed, injects the newly released tasks,
and re-solves warm-started from the surviving plan. monte_carlo() runs paired
scenarios (identical seed per run across policies) and aggregates final costs.
verify() replays the theoretical guarantees as executable checks and fits the
empirical complexity slope.

Wall-clock measurements never enter the primary CSVs; they go to *_timing.csv
sidecars so the primary outputs are byte-reproducible from seeds.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cost import CostBreakdown, total_cost
from .game import (CoalitionStructure, EngineConfig, SolveResult, StructureEval,
                   empty_structure, full_evaluate, is_nash_stable, solve)
from .routing import freeze_until, trace_route
from .scenario import (GeneratorConfig, Scenario, generate_scenario,
                       release_epochs)

STRICT_EPS = 1e-9


# --- event-driven simulation ---------------------------------------------------

@dataclass(frozen=True)
class EventRecord:
    t: float
    released: int
    pre_total: float        # J immediately after injection, before re-solving
    post_total: float       # J after convergence
    sweeps: int
    decisions: int
    accepted: int
    termination: str
    certified_stable: bool
    wall_s: float


@dataclass
class SimulationTimeline:
    events: list[EventRecord]
    final_eval: StructureEval
    final_breakdown: CostBreakdown
    solve_results: list[SolveResult] = field(default_factory=list)

    @property
    def final_total(self) -> float:
        return self.final_breakdown.total

    def coalition_sizes(self) -> dict[str, int]:
        """Final |Coal_m| per task (0 = unserved)."""
        return {m: len(c) for m, c in self.final_breakdown.contributions.items()}

    def coalition_histogram(self) -> dict[str, dict[int, int]]:
        """Coalition-size counts grouped by demand class.

        light: demand servable by one fast agent (<= 10 kg); medium: servable
        by one heavy agent (<= 30 kg); heavy: necessarily overlapping.
        """
        scenario = self.final_eval.scenario
        hist: dict[str, dict[int, int]] = {"light": {}, "medium": {}, "heavy": {}}
        for m, size in self.coalition_sizes().items():
            demand = scenario.task(m).demand_kg
            cls = "light" if demand <= 10 else "medium" if demand <= 30 else "heavy"
            hist[cls][size] = hist[cls].get(size, 0) + 1
        return hist


def _frozen_warm_start(structure: CoalitionStructure, scenario: Scenario,
                       t: float) -> CoalitionStructure:
    routes = {}
    for aid, route in structure.routes.items():
        agent = scenario.agent(aid)
        trace = trace_route(route, agent, scenario, 0.0, agent.position)
        routes[aid] = freeze_until(route, trace, t)
    return CoalitionStructure(routes=routes, t_now=t)


def simulate(scenario: Scenario, policy, config: EngineConfig | None = None,
             collect_trace: bool = False, on_decision=None) -> SimulationTimeline:
    """Run the full dynamic horizon: one warm-started solve per release epoch."""
    config = config or EngineConfig()
    events: list[EventRecord] = []
    results: list[SolveResult] = []
    structure: CoalitionStructure | None = None
    for t in release_epochs(scenario):
        warm = empty_structure(scenario, t) if structure is None \
            else _frozen_warm_start(structure, scenario, t)
        pre_total = full_evaluate(warm.routes, scenario, t).total
        t0 = time.perf_counter()
        res = solve(scenario, policy, t_now=t, warm_start=warm, config=config,
                    collect_trace=collect_trace, on_decision=on_decision)
        wall = time.perf_counter() - t0
        events.append(EventRecord(
            t=t, released=len(res.eval.released_ids), pre_total=pre_total,
            post_total=res.total, sweeps=res.sweeps, decisions=res.decisions,
            accepted=res.accepted, termination=res.termination,
            certified_stable=res.certified_stable, wall_s=wall))
        results.append(res)
        structure = res.structure
    breakdown = total_cost(structure.routes, scenario, t_now=None)
    return SimulationTimeline(events=events, final_eval=results[-1].eval,
                              final_breakdown=breakdown, solve_results=results)


# --- Monte-Carlo benchmark -------------------------------------------------------

@dataclass(frozen=True)
class RunRow:
    scale: str           # "4x10"
    policy: str
    run: int
    seed: int
    final_total: float
    decisions: int
    accepted: int
    stable: bool         # every epoch terminated quiescent and certified
    wall_s: float


@dataclass(frozen=True)
class PolicySummary:
    scale: str
    policy: str
    runs: int
    mean: float
    median: float
    iqr: float
    outliers: int
    stability_rate: float
    mean_wall_s: float


@dataclass
class BenchReport:
    rows: list[RunRow]

    def summaries(self) -> list[PolicySummary]:
        keys = []
        for row in self.rows:
            if (row.scale, row.policy) not in keys:
                keys.append((row.scale, row.policy))
        out = []
        for scale, policy in keys:
            totals = [r.final_total for r in self.rows
                      if r.scale == scale and r.policy == policy]
            walls = [r.wall_s for r in self.rows
                     if r.scale == scale and r.policy == policy]
            stable = [r.stable for r in self.rows
                      if r.scale == scale and r.policy == policy]
            q1, q3 = np.percentile(totals, [25, 75])
            iqr = float(q3 - q1)
            hi, lo = q3 + 1.5 * iqr, q1 - 1.5 * iqr
            out.append(PolicySummary(
                scale=scale, policy=policy, runs=len(totals),
                mean=float(np.mean(totals)), median=float(np.median(totals)),
                iqr=iqr,
                outliers=sum(1 for t in totals if t > hi or t < lo),
                stability_rate=sum(stable) / len(stable),
                mean_wall_s=float(np.mean(walls))))
        return out

    def totals(self, scale: str, policy: str) -> list[float]:
        return [r.final_total for r in self.rows
                if r.scale == scale and r.policy == policy]


def _scale_label(scale: tuple[int, int]) -> str:
    return f"{scale[0]}x{scale[1]}"


def _bench_one(scale: tuple[int, int], run: int, seed: int,
               policies: list[tuple[str, object]], gen: GeneratorConfig,
               engine: EngineConfig) -> list[RunRow]:
    scenario = generate_scenario(gen, seed)
    rows = []
    for name, policy in policies:
        t0 = time.perf_counter()
        timeline = simulate(scenario, policy, config=engine)
        wall = time.perf_counter() - t0
        rows.append(RunRow(
            scale=_scale_label(scale), policy=name, run=run, seed=seed,
            final_total=timeline.final_total,
            decisions=sum(e.decisions for e in timeline.events),
            accepted=sum(e.accepted for e in timeline.events),
            stable=all(e.termination == "quiescent" and e.certified_stable
                       for e in timeline.events),
            wall_s=wall))
    return rows


def _bench_one_star(args):
    return _bench_one(*args)


def monte_carlo(scales: list[tuple[int, int]], policies: list[tuple[str, object]],
                runs: int = 100, base_seed: int = 10_000,
                gen_template: GeneratorConfig | None = None,
                engine: EngineConfig | None = None,
                workers: int = 1) -> BenchReport:
    """Paired Monte-Carlo: run r of every policy sees the seed base_seed + r."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    template = gen_template or GeneratorConfig()
    engine = engine or EngineConfig()
    jobs = []
    for scale in scales:
        gen = GeneratorConfig(
            n_agents=scale[0], n_tasks=scale[1], n_depots=template.n_depots,
            area_side_m=template.area_side_m, demand_range=template.demand_range,
            window_style=template.window_style,
            arrival_fraction=template.arrival_fraction,
            weights=template.weights, horizon_s=template.horizon_s)
        for r in range(runs):
            jobs.append((scale, r, base_seed + r, policies, gen, engine))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_bench_one_star, jobs))
    else:
        nested = [_bench_one_star(j) for j in jobs]
    rows = [row for batch in nested for row in batch]
    rows.sort(key=lambda r: (r.scale, r.run, r.policy))
    return BenchReport(rows=rows)


def paired_sign_test(a: list[float], b: list[float]) -> tuple[int, int, float]:
    """One-sided sign test that a < b pairwise; ties dropped.

    Returns (wins_for_a, effective_n, p_value).
    """
    from scipy.stats import binomtest
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    wins = sum(1 for x, y in zip(a, b) if x < y)
    losses = sum(1 for x, y in zip(a, b) if x > y)
    n = wins + losses
    if n == 0:
        return 0, 0, 1.0
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue
    return wins, n, float(p)


# --- invariant verification -------------------------------------------------------

@dataclass
class VerifyReport:
    runs: int
    accepted_moves: int
    descent_violations: int
    potential_violations: int
    quiescent_runs: int
    stability_violations: int
    budget_violations: int
    failures: list[tuple[int, str]]      # (scenario seed, failed check)
    slope: float | None = None
    slope_points: list[tuple[int, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.descent_violations == 0 and self.potential_violations == 0
                and self.stability_violations == 0 and self.budget_violations == 0
                and (self.slope is None or self.slope <= 2.3))


class _InvariantObserver:
    """Re-evaluates every accepted move through the full-cost path."""

    def __init__(self, scenario: Scenario, t_now: float, prev_full: float):
        self.scenario = scenario
        self.t_now = t_now
        self.prev_full = prev_full   # full-path potential before the next move
        self.accepted = 0
        self.descent_violations = 0
        self.potential_violations = 0

    def __call__(self, evt) -> None:
        if not evt.accepted:
            return
        self.accepted += 1
        delta_j = evt.total_after - evt.total_before
        if not delta_j < -STRICT_EPS:
            self.descent_violations += 1
        full_after = full_evaluate(evt.eval.routes, self.scenario, self.t_now).total
        delta_phi = full_after - self.prev_full
        if abs(delta_phi - delta_j) > STRICT_EPS \
                or abs(full_after - evt.total_after) > STRICT_EPS:
            self.potential_violations += 1
        self.prev_full = full_after


def verify_invariants(sample_size: int = 100, seed: int = 0,
                      runs_per_scenario: int = 1,
                      gen: GeneratorConfig | None = None,
                      engine: EngineConfig | None = None,
                      policy=None) -> VerifyReport:
    """Descent, potential-identity, stability, and budget checks."""
    from .policy import RandomPolicy
    gen = gen or GeneratorConfig()
    engine = engine or EngineConfig()
    policy = policy or RandomPolicy()
    report = VerifyReport(runs=0, accepted_moves=0, descent_violations=0,
                          potential_violations=0, quiescent_runs=0,
                          stability_violations=0, budget_violations=0,
                          failures=[])
    for i in range(sample_size):
        scen_seed = seed + i
        scenario = generate_scenario(gen, scen_seed)
        for rep in range(runs_per_scenario):
            cfg = EngineConfig(max_sweeps=engine.max_sweeps,
                               max_idle=engine.max_idle,
                               tabu_capacity=engine.tabu_capacity,
                               seed=engine.seed + 1000 * rep + i)
            structure: CoalitionStructure | None = None
            for t in release_epochs(scenario):
                warm = empty_structure(scenario, t) if structure is None \
                    else _frozen_warm_start(structure, scenario, t)
                pre_full = full_evaluate(warm.routes, scenario, t).total
                obs = _InvariantObserver(scenario, t, pre_full)
                res = solve(scenario, policy, t_now=t, warm_start=warm,
                            config=cfg, on_decision=obs)
                report.accepted_moves += obs.accepted
                if obs.descent_violations:
                    report.descent_violations += obs.descent_violations
                    report.failures.append((scen_seed, "descent"))
                if obs.potential_violations:
                    report.potential_violations += obs.potential_violations
                    report.failures.append((scen_seed, "potential"))
                if res.decisions > cfg.max_sweeps * len(scenario.agents):
                    report.budget_violations += 1
                    report.failures.append((scen_seed, "budget"))
                if res.termination == "quiescent":
                    report.quiescent_runs += 1
                    stab = is_nash_stable(res.eval, scenario, t)
                    if not stab.stable or stab.witness_count != 0:
                        report.stability_violations += 1
                        report.failures.append((scen_seed, "stability"))
                structure = res.structure
            report.runs += 1
    return report


def complexity_slope(scales=((4, 10), (8, 20), (16, 40), (32, 80)),
                     runs_per_scale: int = 2, seed: int = 0,
                     engine: EngineConfig | None = None,
                     policy=None) -> tuple[float, list[tuple[int, float]]]:
    """Log-log slope of mean per-decision wall time vs task count M."""
    from .policy import RandomPolicy
    engine = engine or EngineConfig()
    policy = policy or RandomPolicy()
    points = []
    for n_agents, n_tasks in scales:
        gen = GeneratorConfig(n_agents=n_agents, n_tasks=n_tasks,
                              arrival_fraction=0.0)
        total_wall = 0.0
        total_decisions = 0
        for r in range(runs_per_scale):
            scenario = generate_scenario(gen, seed + 7000 + r)
            t0 = time.perf_counter()
            res = solve(scenario, policy, t_now=0.0, config=engine)
            total_wall += time.perf_counter() - t0
            total_decisions += res.decisions
        points.append((n_tasks, total_wall / max(total_decisions, 1)))
    xs = np.log([m for m, _ in points])
    ys = np.log([t for _, t in points])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope, points


def verify(sample_size: int = 100, seed: int = 0, runs_per_scenario: int = 1,
           include_slope: bool = True, slope_runs: int = 2,
           gen: GeneratorConfig | None = None,
           engine: EngineConfig | None = None) -> VerifyReport:
    report = verify_invariants(sample_size=sample_size, seed=seed,
                               runs_per_scenario=runs_per_scenario,
                               gen=gen, engine=engine)
    if include_slope:
        slope, points = complexity_slope(runs_per_scale=slope_runs, seed=seed,
                                         engine=engine)
        report.slope = slope
        report.slope_points = points
    return report


# --- CSV writers -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_timeline_csv(timeline: SimulationTimeline, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "released", "pre_total", "post_total", "sweeps",
                    "decisions", "accepted", "termination", "certified_stable"])
        for e in timeline.events:
            w.writerow([_fmt(e.t), e.released, _fmt(e.pre_total),
                        _fmt(e.post_total), e.sweeps, e.decisions, e.accepted,
                        e.termination, _fmt(e.certified_stable)])


def write_timeline_timing_csv(timeline: SimulationTimeline, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "wall_s"])
        for e in timeline.events:
            w.writerow([_fmt(e.t), _fmt(e.wall_s)])


def write_trace_csv(results: list[SolveResult], path: str) -> None:
    """Iteration trace: one row per decision, epochs concatenated."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch_t", "k", "agent", "target", "op", "delta",
                    "accepted", "idle", "tabu_size"])
        for res in results:
            t = res.eval.t_now if res.eval.t_now is not None else 0.0
            for row in res.trace:
                w.writerow([_fmt(t), row.sweep, row.agent, row.target, row.op,
                            _fmt(row.delta), _fmt(row.accepted), row.idle,
                            row.tabu_size])


def write_bench_csv(report: BenchReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "policy", "run", "seed", "final_total",
                    "decisions", "accepted", "stable"])
        for r in report.rows:
            w.writerow([r.scale, r.policy, r.run, r.seed, _fmt(r.final_total),
                        r.decisions, r.accepted, _fmt(r.stable)])


def write_bench_timing_csv(report: BenchReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "policy", "run", "wall_s"])
        for r in report.rows:
            w.writerow([r.scale, r.policy, r.run, _fmt(r.wall_s)])


def write_bench_summary_csv(report: BenchReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "policy", "runs", "mean", "median", "iqr",
                    "outliers", "stability_rate"])
        for s in report.summaries():
            w.writerow([s.scale, s.policy, s.runs, _fmt(s.mean), _fmt(s.median),
                        _fmt(s.iqr), s.outliers, _fmt(s.stability_rate)])
