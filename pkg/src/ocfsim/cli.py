"""Command-line front end.

Subcommands: generate, solve, simulate, train, bench, verify. All outputs are
CSV or JSON; wall-clock numbers go to separate *_timing.csv files so the
primary outputs are reproducible byte-for-byte from the seeds.
"""

from __future__ import annotations

import argparse
import json
import sys

from .cost import CostBreakdown
from .game import EngineConfig, solve
from .harness import (monte_carlo, simulate, verify, write_bench_csv,
                      write_bench_summary_csv, write_bench_timing_csv,
                      write_timeline_csv, write_timeline_timing_csv,
                      write_trace_csv)
from .policy import make_policy
from .scenario import (GeneratorConfig, generate_scenario, load_scenario,
                       save_scenario)


def _engine_from_args(args) -> EngineConfig:
    return EngineConfig(max_sweeps=args.kmax, max_idle=args.cmax,
                        seed=args.seed)


def _policy_from_args(args):
    return make_policy(args.policy, checkpoint_path=args.checkpoint,
                       mode=getattr(args, "mode", "greedy"))


def _breakdown_dict(b: CostBreakdown, routes) -> dict:
    return {
        "total": b.total,
        "unserved_bucket": b.unserved_bucket,
        "tasks": {
            m: {
                "load": tc.load, "time": tc.time, "op": tc.op,
                "weighted": tc.weighted,
                "coalition": {n: {"amount_kg": c.amount,
                                  "arrival_s": c.arrival_s,
                                  "ontime": c.ontime}
                              for n, c in b.contributions[m].items()},
            }
            for m, tc in b.task_costs.items()
        },
        "agents": {
            n: {"op_total": op.total, "share": b.agent_shares[n],
                "route": [[node.node_ref, node.amount]
                          for node in routes[n].nodes]}
            for n, op in b.agent_ops.items()
        },
    }


def _parse_scale(text: str) -> tuple[int, int]:
    try:
        a, m = text.lower().split("x")
        return int(a), int(m)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"scale must look like 4x10, got {text!r}") from exc


def cmd_generate(args) -> int:
    cfg = GeneratorConfig(n_agents=args.scale[0], n_tasks=args.scale[1],
                          n_depots=args.depots,
                          arrival_fraction=args.arrival_fraction)
    sc = generate_scenario(cfg, args.seed)
    save_scenario(sc, args.out)
    print(f"wrote {args.out}: {len(sc.agents)} agents, {len(sc.tasks)} tasks, "
          f"{len(sc.depots)} depots, seed {args.seed}")
    return 0


def cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    policy = _policy_from_args(args)
    res = solve(scenario, policy, t_now=0.0, config=_engine_from_args(args))
    from .cost import total_cost
    breakdown = total_cost(res.eval.routes, scenario, t_now=0.0)
    doc = _breakdown_dict(breakdown, res.eval.routes)
    doc["termination"] = res.termination
    doc["certified_stable"] = res.certified_stable
    doc["sweeps"] = res.sweeps
    doc["accepted"] = res.accepted
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"J = {breakdown.total:.6f} ({res.termination}, "
          f"{res.accepted} accepted moves) -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    policy = _policy_from_args(args)
    timeline = simulate(scenario, policy, config=_engine_from_args(args),
                        collect_trace=args.trace)
    write_timeline_csv(timeline, args.out + "_timeline.csv")
    write_timeline_timing_csv(timeline, args.out + "_timeline_timing.csv")
    if args.trace:
        write_trace_csv(timeline.solve_results, args.out + "_trace.csv")
    doc = _breakdown_dict(timeline.final_breakdown,
                          timeline.final_eval.routes)
    with open(args.out + "_structure.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(timeline.events)} events, final J = "
          f"{timeline.final_total:.6f} -> {args.out}_timeline.csv")
    return 0


def cmd_train(args) -> int:
    from .tsac.train import TrainConfig, train
    gen = GeneratorConfig(n_agents=args.scale[0], n_tasks=args.scale[1])
    cfg = TrainConfig(total_env_steps=args.steps, seed=args.seed)
    result = train(gen, cfg,
                   checkpoint_path=args.out + ".ckpt",
                   curve_path=args.out + "_curve.csv")
    last = result.history[-1]
    print(f"{len(result.history)} episodes, {result.env_steps} env steps, "
          f"{result.grad_steps} grad steps; last return "
          f"{last.episode_return:.3f}, last J {last.final_total:.3f}")
    print(f"checkpoint -> {args.out}.ckpt, curve -> {args.out}_curve.csv")
    return 0


def cmd_bench(args) -> int:
    policies = []
    for name in args.policies.split(","):
        name = name.strip()
        policies.append((name, make_policy(
            name, checkpoint_path=args.checkpoint, mode="greedy")))
    report = monte_carlo(scales=args.scales, policies=policies,
                         runs=args.runs, base_seed=args.seed,
                         engine=EngineConfig(max_sweeps=args.kmax,
                                             max_idle=args.cmax),
                         workers=args.workers)
    write_bench_csv(report, args.out + "_bench.csv")
    write_bench_timing_csv(report, args.out + "_bench_timing.csv")
    write_bench_summary_csv(report, args.out + "_bench_summary.csv")
    for s in report.summaries():
        print(f"{s.scale:>7} {s.policy:>10}: mean J {s.mean:.3f}, "
              f"median {s.median:.3f}, IQR {s.iqr:.3f}, "
              f"stable {s.stability_rate:.0%}")
    return 0


def cmd_verify(args) -> int:
    report = verify(sample_size=args.sample_size, seed=args.seed,
                    runs_per_scenario=args.runs,
                    include_slope=not args.skip_slope)
    print(f"runs: {report.runs}  accepted moves: {report.accepted_moves}")
    print(f"descent violations:   {report.descent_violations}")
    print(f"potential violations: {report.potential_violations}")
    print(f"stability violations: {report.stability_violations} "
          f"(over {report.quiescent_runs} quiescent runs)")
    print(f"budget violations:    {report.budget_violations}")
    if report.slope is not None:
        pts = ", ".join(f"M={m}: {t:.2e}s" for m, t in report.slope_points)
        print(f"per-decision scaling: slope {report.slope:.3f} ({pts})")
    if report.failures:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump([{"seed": s, "check": c} for s, c in report.failures],
                      fh, indent=2)
            fh.write("\n")
        print(f"failing cases -> {args.out}")
    print("PASS" if report.ok else "FAIL")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ocfsim",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True,
                            help="scenario JSON file")
            sp.add_argument("--policy", default="heuristic",
                            choices=["random", "heuristic", "tsac"])
            sp.add_argument("--checkpoint", default=None,
                            help="network checkpoint (required for tsac)")
            sp.add_argument("--mode", default="greedy",
                            choices=["greedy", "sample"],
                            help="tsac action selection")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--kmax", type=int, default=200,
                        help="sweep budget per solve")
        sp.add_argument("--cmax", type=int, default=60,
                        help="idle decisions before stability certification")

    g = sub.add_parser("generate", help="write a random scenario file")
    g.add_argument("--scale", type=_parse_scale, default=(4, 10),
                   help="agents x tasks, e.g. 4x10")
    g.add_argument("--depots", type=int, default=2)
    g.add_argument("--arrival-fraction", type=float, default=0.4,
                   help="fraction of tasks that arrive mid-mission")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("solve", help="one-shot allocation at t = 0")
    common(s)
    s.add_argument("--out", required=True, help="structure JSON out")
    s.set_defaults(fn=cmd_solve)

    sim = sub.add_parser("simulate", help="event-driven dynamic run")
    common(sim)
    sim.add_argument("--trace", action="store_true",
                     help="also write the per-decision trace CSV")
    sim.add_argument("--out", required=True, help="output path prefix")
    sim.set_defaults(fn=cmd_simulate)

    t = sub.add_parser("train", help="train the attention policy")
    t.add_argument("--scale", type=_parse_scale, default=(4, 10))
    t.add_argument("--steps", type=int, default=2000,
                   help="total environment steps")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output path prefix")
    t.set_defaults(fn=cmd_train)

    b = sub.add_parser("bench", help="paired Monte-Carlo benchmark")
    b.add_argument("--scales", type=lambda s: [_parse_scale(x)
                                               for x in s.split(",")],
                   default=[(4, 10)], help="comma list, e.g. 4x10,8x20")
    b.add_argument("--policies", default="random,heuristic",
                   help="comma list from {random,heuristic,tsac}")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--runs", type=int, default=100)
    b.add_argument("--seed", type=int, default=10_000,
                   help="base seed; run r uses seed base+r")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--kmax", type=int, default=200)
    b.add_argument("--cmax", type=int, default=60)
    b.add_argument("--out", required=True, help="output path prefix")
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--sample-size", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--runs", type=int, default=1,
                   help="solver repetitions per scenario")
    v.add_argument("--skip-slope", action="store_true")
    v.add_argument("--out", default="verify_failures.json",
                   help="failing-case file (written only on failure)")
    v.set_defaults(fn=cmd_verify)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
