"""Generalized logistics cost: load shortfall, timeliness, and energy terms.

Each task m accrues C_m = w1*C_load + w2*C_time + w3*C_op, where C_op is the
energy of the legs arriving at m. The system objective J additionally charges
every other flown leg (depot detours, the return leg) through per-agent route
totals, so detours are never free:

    J = sum_m (w1*C_load_m + w2*C_time_m) + w3 * sum_n RouteOp_n
      = sum_m C_m + w3 * sum_n NonTaskOp_n        (exact identity)

The structure-level potential equals J, so any unilateral route change moves
the potential by exactly the objective delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .routing import Route, RouteTrace, fleet_op_scale, route_op_cost, trace_route
from .scenario import Agent, Scenario, Task

STRICT_EPS = 1e-9


def load_cost(alloc: Mapping[str, int], arrivals: Mapping[str, float],
              task: Task) -> float:
    """Unserved demand fraction, counting only in-window contributions."""
    ontime = sum(a for n, a in alloc.items()
                 if a > 0 and arrivals[n] <= task.window_end)
    return max(0.0, 1.0 - ontime / task.demand_kg)


def time_cost(alloc: Mapping[str, int], arrivals: Mapping[str, float],
              task: Task, horizon_s: float) -> float:
    """Normalized coalition completion delay; 1.0 when unserved or late."""
    members = [arrivals[n] for n, a in alloc.items() if a > 0]
    if not members:
        return 1.0
    last = max(members)
    if last > task.window_end:
        return 1.0
    return (last - task.window_start) / horizon_s


def op_cost(trace: RouteTrace, agent: Agent, op_scale: float):
    """Per-leg energy cost and route total (see routing.route_op_cost)."""
    return route_op_cost(trace, agent, op_scale)


@dataclass(frozen=True)
class TaskCost:
    load: float
    time: float
    op: float
    weighted: float  # w1*load + w2*time + w3*op


@dataclass(frozen=True)
class AgentOp:
    total: float
    task_share: float
    nontask_share: float
    saturated: bool


@dataclass(frozen=True)
class Contribution:
    amount: int
    arrival_s: float
    ontime: bool
    leg_cost: float


@dataclass(frozen=True)
class CostBreakdown:
    total: float                 # J
    potential: float             # identical to J by construction
    task_costs: dict[str, TaskCost]
    agent_ops: dict[str, AgentOp]
    agent_shares: dict[str, float]
    unserved_bucket: float
    contributions: dict[str, dict[str, Contribution]]

    @property
    def served_task_ids(self) -> list[str]:
        return [m for m, c in self.contributions.items() if c]


def task_cost(alloc: Mapping[str, int], arrivals: Mapping[str, float],
              leg_costs: Mapping[str, float], task: Task,
              weights: tuple[float, float, float], horizon_s: float) -> TaskCost:
    w1, w2, w3 = weights
    load = load_cost(alloc, arrivals, task)
    time = time_cost(alloc, arrivals, task, horizon_s)
    op = sum(leg_costs[n] for n, a in alloc.items() if a > 0)
    return TaskCost(load=load, time=time, op=op,
                    weighted=w1 * load + w2 * time + w3 * op)


def combine_total(task_load_time: list[float], op_totals: list[float],
                  w3: float) -> float:
    """Fixed-order reduction shared by full and incremental evaluation."""
    return sum(task_load_time) + w3 * sum(op_totals)


def total_cost(routes: Mapping[str, Route], scenario: Scenario,
               t_now: float | None = None) -> CostBreakdown:
    """Full evaluation of a coalition structure's routes.

    Only tasks released by t_now enter the objective (all tasks when None).
    Raises ValueError if a route carries an unreleased task or a bad node ref.
    """
    w1, w2, w3 = scenario.weights
    op_scale = fleet_op_scale(scenario.agents)
    released = [t for t in scenario.tasks if t_now is None or t.release_s <= t_now]
    released_ids = {t.id for t in released}

    contributions: dict[str, dict[str, Contribution]] = {t.id: {} for t in released}
    agent_ops: dict[str, AgentOp] = {}
    task_leg_totals: dict[str, float] = {}

    for agent in scenario.agents:
        route = routes[agent.id]
        trace = trace_route(route, agent, scenario, 0.0, agent.position)
        op = route_op_cost(trace, agent, op_scale)
        task_legs = 0.0
        for k, node in enumerate(route.nodes):
            ref = node.node_ref
            if not scenario.is_task(ref):
                continue
            if ref not in released_ids:
                raise ValueError(f"route of {agent.id} carries unreleased task {ref}")
            task_legs += op.per_leg[k]
            if node.amount > 0:
                task = scenario.task(ref)
                arr = trace.arrival_s[k]
                contributions[ref][agent.id] = Contribution(
                    amount=node.amount, arrival_s=arr,
                    ontime=arr <= task.window_end, leg_cost=op.per_leg[k])
        agent_ops[agent.id] = AgentOp(total=op.total, task_share=task_legs,
                                      nontask_share=op.total - task_legs,
                                      saturated=op.saturated)
        task_leg_totals[agent.id] = task_legs

    task_costs: dict[str, TaskCost] = {}
    load_time_parts: list[float] = []
    for task in released:
        contribs = contributions[task.id]
        alloc = {n: c.amount for n, c in contribs.items()}
        arrivals = {n: c.arrival_s for n, c in contribs.items()}
        legs = {n: c.leg_cost for n, c in contribs.items()}
        tc = task_cost(alloc, arrivals, legs, task, scenario.weights, scenario.horizon_s)
        task_costs[task.id] = tc
        load_time_parts.append(w1 * tc.load + w2 * tc.time)

    total = combine_total(load_time_parts, [agent_ops[a.id].total for a in scenario.agents], w3)

    agent_shares = {a.id: w3 * agent_ops[a.id].total for a in scenario.agents}
    unserved = 0.0
    for task in released:
        members = list(contributions[task.id])
        tc = task_costs[task.id]
        if not members:
            unserved += w1 * tc.load + w2 * tc.time
            continue
        split = (w1 * tc.load + w2 * tc.time) / len(members)
        for n in members:
            agent_shares[n] += split

    return CostBreakdown(total=total, potential=total, task_costs=task_costs,
                         agent_ops=agent_ops, agent_shares=agent_shares,
                         unserved_bucket=unserved, contributions=contributions)
