"""Potential-game engine for overlapping coalition formation over routes.

Agents take turns (random sweep order) proposing a single ADD or REMOVE of a
task in their own route. A move is accepted only if it strictly decreases the
system objective J and does not revisit a tabu structure. Because the
structure potential equals J, every unilateral improvement strictly decreases
a bounded potential, so the accepted-move sequence is finite and terminates in
a Nash-stable structure. Quiescence (a long run of non-improving decisions)
is certified by an exhaustive single-deviation check before the engine
declares the structure stable; an uncovered improving deviation is applied
and the search continues.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import cost as costmod
from .cost import STRICT_EPS, Contribution, combine_total
from .routing import (Insertion, Route, RouteNode, RouteOpCost, RouteTrace,
                      cheapest_insertion, empty_route, fleet_op_scale,
                      trace_route)
from .scenario import Scenario, TaskKind


@dataclass(frozen=True)
class CoalitionStructure:
    routes: dict[str, Route]
    t_now: float = 0.0


def empty_structure(scenario: Scenario, t_now: float = 0.0) -> CoalitionStructure:
    return CoalitionStructure(
        routes={a.id: empty_route(a) for a in scenario.agents}, t_now=t_now)


def allocations(routes: dict[str, Route], scenario: Scenario) -> dict[str, dict[str, int]]:
    """task id -> {agent id -> committed kg} for positive commitments."""
    out: dict[str, dict[str, int]] = {}
    for aid, route in routes.items():
        for node in route.nodes:
            if scenario.is_task(node.node_ref) and node.amount > 0:
                out.setdefault(node.node_ref, {})[aid] = node.amount
    return out


def validate_structure(structure: CoalitionStructure, scenario: Scenario) -> None:
    """Raises ValueError on any structural inconsistency."""
    if set(structure.routes) != {a.id for a in scenario.agents}:
        raise ValueError("routes must cover exactly the scenario agents")
    for aid, route in structure.routes.items():
        if route.agent_id != aid:
            raise ValueError(f"route keyed {aid} belongs to {route.agent_id}")
        if len(route.nodes) < 2:
            raise ValueError(f"route of {aid} must have at least start and end depots")
        if not scenario.is_depot(route.nodes[0].node_ref) \
                or not scenario.is_depot(route.nodes[-1].node_ref):
            raise ValueError(f"route of {aid} must start and end at depots")
        seen: set[str] = set()
        for node in route.nodes:
            if scenario.is_task(node.node_ref):
                if node.amount <= 0:
                    raise ValueError(f"task node {node.node_ref} of {aid} has no commitment")
                if node.node_ref in seen:
                    raise ValueError(f"task {node.node_ref} appears twice in route of {aid}")
                seen.add(node.node_ref)
            elif scenario.is_depot(node.node_ref):
                if node.amount != 0:
                    raise ValueError(f"depot node {node.node_ref} of {aid} carries a commitment")
            else:
                raise ValueError(f"unknown node ref {node.node_ref} in route of {aid}")


def structure_hash(routes: dict[str, Route]) -> str:
    """Canonical, agent-order-independent hash of allocations and node orders."""
    canon = tuple(sorted(
        (aid, tuple((n.node_ref, n.amount) for n in route.nodes))
        for aid, route in routes.items()))
    return hashlib.blake2b(repr(canon).encode(), digest_size=16).hexdigest()


class TabuList:
    """FIFO memory of abandoned structure hashes with O(1) membership."""

    def __init__(self, capacity: int = 50):
        self.capacity = capacity
        self._fifo: deque[str] = deque()
        self._members: set[str] = set()

    def push(self, h: str) -> None:
        if h in self._members:
            return
        self._fifo.append(h)
        self._members.add(h)
        if len(self._fifo) > self.capacity:
            self._members.discard(self._fifo.popleft())

    def __contains__(self, h: str) -> bool:
        return h in self._members

    def __len__(self) -> int:
        return len(self._fifo)


@dataclass(frozen=True)
class EngineConfig:
    max_sweeps: int = 200       # hard budget of sweeps; each sweep is one decision per agent
    max_idle: int = 60          # consecutive non-improving decisions before certification
    tabu_capacity: int = 50
    seed: int = 0


def sweep_order(n_agents: int, seed: int, k: int) -> np.ndarray:
    """Fresh uniform permutation of agent indices for sweep k."""
    rng = np.random.default_rng([int(seed), int(k), 0x51EE])
    return rng.permutation(n_agents)


# --- structure evaluation (full and incremental) -----------------------------

@dataclass
class StructureEval:
    """Cached evaluation of a structure; supports one-agent incremental updates."""
    scenario: Scenario
    t_now: float | None
    routes: dict[str, Route]
    traces: dict[str, RouteTrace]
    ops: dict[str, RouteOpCost]
    contribs: dict[str, dict[str, Contribution]]
    load_time: dict[str, float]
    total: float
    op_scale: float
    released_ids: tuple[str, ...]

    def arrival(self, agent_id: str, task_id: str) -> float:
        return self.contribs[task_id][agent_id].arrival_s

    def structure(self) -> CoalitionStructure:
        return CoalitionStructure(routes=dict(self.routes),
                                  t_now=self.t_now if self.t_now is not None else 0.0)


def _agent_contribs(route: Route, trace: RouteTrace, op: RouteOpCost,
                    scenario: Scenario) -> dict[str, Contribution]:
    out: dict[str, Contribution] = {}
    for k, node in enumerate(route.nodes):
        if scenario.is_task(node.node_ref) and node.amount > 0:
            task = scenario.task(node.node_ref)
            arr = trace.arrival_s[k]
            out[node.node_ref] = Contribution(
                amount=node.amount, arrival_s=arr,
                ontime=arr <= task.window_end, leg_cost=op.per_leg[k])
    return out


def _task_load_time(contribs: dict[str, Contribution], task, weights,
                    horizon_s: float) -> float:
    w1, w2, _ = weights
    items = sorted(contribs.items())
    alloc = {n: c.amount for n, c in items}
    arrivals = {n: c.arrival_s for n, c in items}
    return (w1 * costmod.load_cost(alloc, arrivals, task)
            + w2 * costmod.time_cost(alloc, arrivals, task, horizon_s))


def _combine(ev_like_load_time, ev_like_ops, scenario: Scenario,
             released_ids) -> float:
    w3 = scenario.weights[2]
    return combine_total([ev_like_load_time[m] for m in released_ids],
                         [ev_like_ops[a.id].total for a in scenario.agents], w3)


def full_evaluate(routes: dict[str, Route], scenario: Scenario,
                  t_now: float | None = None) -> StructureEval:
    op_scale = fleet_op_scale(scenario.agents)
    released = [t for t in scenario.tasks if t_now is None or t.release_s <= t_now]
    released_ids = tuple(t.id for t in released)
    traces: dict[str, RouteTrace] = {}
    ops: dict[str, RouteOpCost] = {}
    contribs: dict[str, dict[str, Contribution]] = {m: {} for m in released_ids}
    for agent in scenario.agents:
        route = routes[agent.id]
        trace = trace_route(route, agent, scenario, 0.0, agent.position)
        op = costmod.op_cost(trace, agent, op_scale)
        traces[agent.id] = trace
        ops[agent.id] = op
        for m, c in _agent_contribs(route, trace, op, scenario).items():
            if m not in contribs:
                raise ValueError(f"route of {agent.id} carries unreleased task {m}")
            contribs[m][agent.id] = c
    load_time = {m: _task_load_time(contribs[m], scenario.task(m),
                                    scenario.weights, scenario.horizon_s)
                 for m in released_ids}
    total = _combine(load_time, ops, scenario, released_ids)
    return StructureEval(scenario=scenario, t_now=t_now, routes=dict(routes),
                         traces=traces, ops=ops, contribs=contribs,
                         load_time=load_time, total=total, op_scale=op_scale,
                         released_ids=released_ids)


def replace_route(ev: StructureEval, agent_id: str, new_route: Route) -> StructureEval:
    """Incremental re-evaluation after replacing one agent's route."""
    scenario = ev.scenario
    agent = scenario.agent(agent_id)
    trace = trace_route(new_route, agent, scenario, 0.0, agent.position)
    op = costmod.op_cost(trace, agent, ev.op_scale)
    new_contrib = _agent_contribs(new_route, trace, op, scenario)

    old_route = ev.routes[agent_id]
    affected = {n.node_ref for n in old_route.nodes
                if scenario.is_task(n.node_ref) and n.amount > 0}
    affected |= set(new_contrib)

    contribs = dict(ev.contribs)
    load_time = dict(ev.load_time)
    for m in affected:
        if m not in contribs:
            raise ValueError(f"route of {agent_id} carries unreleased task {m}")
        d = dict(contribs[m])
        d.pop(agent_id, None)
        if m in new_contrib:
            d[agent_id] = new_contrib[m]
        contribs[m] = d
        load_time[m] = _task_load_time(d, scenario.task(m), scenario.weights,
                                       scenario.horizon_s)

    routes = dict(ev.routes)
    routes[agent_id] = new_route
    traces = dict(ev.traces)
    traces[agent_id] = trace
    ops = dict(ev.ops)
    ops[agent_id] = op
    total = _combine(load_time, ops, scenario, ev.released_ids)
    return StructureEval(scenario=scenario, t_now=ev.t_now, routes=routes,
                         traces=traces, ops=ops, contribs=contribs,
                         load_time=load_time, total=total, op_scale=ev.op_scale,
                         released_ids=ev.released_ids)


def residual_demand(task_id: str, ev: StructureEval,
                    excluding: str | None = None) -> int:
    """Demand not yet covered by in-window commitments of other agents."""
    task = ev.scenario.task(task_id)
    covered = sum(c.amount for n, c in ev.contribs[task_id].items()
                  if c.ontime and n != excluding)
    return max(0, task.demand_kg - covered)


# --- single-agent moves ------------------------------------------------------

@dataclass(frozen=True)
class Proposal:
    feasible: bool
    op: str
    agent_id: str
    target: str
    eval: StructureEval | None = None
    amount: int = 0
    note: str = ""


def _mutable_task_refs(route: Route, scenario: Scenario) -> set[str]:
    return {r for r in route.mutable_refs() if scenario.is_task(r)}


def _frozen_task_refs(route: Route, scenario: Scenario) -> set[str]:
    return {n.node_ref for n in route.nodes[:route.frozen_prefix_len]
            if scenario.is_task(n.node_ref)}


def propose_add(ev: StructureEval, agent_id: str, task_id: str) -> Proposal:
    """Join a coalition: commit min(residual, max payload that fits) and insert."""
    scenario = ev.scenario
    agent = scenario.agent(agent_id)
    route = ev.routes[agent_id]
    if task_id not in ev.contribs:
        return Proposal(False, "add", agent_id, task_id, note="task not released")
    if task_id in set(route.refs()):
        return Proposal(False, "add", agent_id, task_id, note="already in route")
    residual = residual_demand(task_id, ev, excluding=agent_id)
    if residual == 0:
        return Proposal(False, "add", agent_id, task_id, note="no residual demand")

    def try_amount(a: int) -> Insertion | None:
        return cheapest_insertion(route, task_id, a, scenario,
                                  start_pos=agent.position)

    hi = min(residual, agent.capacity_kg)
    ins = try_amount(hi)
    amount = hi
    if ins is None:
        # Largest payload with any feasible placement; feasibility is
        # monotone in the committed amount.
        lo_ok, hi_bad = 0, hi
        best = None
        while hi_bad - lo_ok > 1:
            mid = (lo_ok + hi_bad) // 2
            cand = try_amount(mid)
            if cand is None:
                hi_bad = mid
            else:
                lo_ok, best = mid, cand
        if best is None:
            return Proposal(False, "add", agent_id, task_id, note="no feasible insertion")
        ins, amount = best, lo_ok

    new_ev = replace_route(ev, agent_id, ins.route)
    return Proposal(True, "add", agent_id, task_id, eval=new_ev, amount=amount)


def _drop_redundant_depots(nodes: tuple[RouteNode, ...], frozen: int,
                           scenario: Scenario) -> tuple[RouteNode, ...]:
    """Collapse adjacent depot visits left behind by a removal."""
    changed = True
    while changed:
        changed = False
        for i in range(max(frozen, 1), len(nodes)):
            if not (scenario.is_depot(nodes[i].node_ref)
                    and scenario.is_depot(nodes[i - 1].node_ref)):
                continue
            if len(nodes) == 2:
                break  # canonical empty loop
            # Prefer dropping the earlier visit (typically an orphaned reload
            # stop); the origin and frozen nodes stay put.
            drop = i - 1 if i - 1 >= max(frozen, 1) else i
            nodes = nodes[:drop] + nodes[drop + 1:]
            changed = True
            break
    return nodes


def propose_remove(ev: StructureEval, agent_id: str, task_id: str) -> Proposal:
    """Leave a coalition: delete the task node and any depot visit it orphaned."""
    scenario = ev.scenario
    route = ev.routes[agent_id]
    idx = None
    for i in range(route.frozen_prefix_len, len(route.nodes)):
        if route.nodes[i].node_ref == task_id:
            idx = i
            break
    if idx is None:
        return Proposal(False, "remove", agent_id, task_id, note="not in mutable suffix")
    nodes = route.nodes[:idx] + route.nodes[idx + 1:]
    nodes = _drop_redundant_depots(nodes, route.frozen_prefix_len, scenario)
    new_route = Route(agent_id=agent_id, nodes=nodes,
                      frozen_prefix_len=route.frozen_prefix_len)
    new_ev = replace_route(ev, agent_id, new_route)
    return Proposal(True, "remove", agent_id, task_id, eval=new_ev,
                    amount=-route.nodes[idx].amount)


def _depot_serves_delivery(route: Route, visit_idx: int, scenario: Scenario) -> bool:
    for node in route.nodes[visit_idx + 1:]:
        if scenario.is_depot(node.node_ref):
            return False
        if scenario.task(node.node_ref).kind is TaskKind.DELIVERY and node.amount > 0:
            return True
    return False


def propose_depot_add(ev: StructureEval, agent_id: str, depot_id: str) -> Proposal:
    """Insert a depot visit at the cheapest feasible position."""
    scenario = ev.scenario
    agent = scenario.agent(agent_id)
    route = ev.routes[agent_id]
    nodes = route.nodes
    f = route.frozen_prefix_len
    visit = RouteNode(depot_id)
    if f >= len(nodes):
        variants = [nodes + (visit,)]
    else:
        variants = [nodes[:i] + (visit,) + nodes[i:]
                    for i in range(max(f, 1), len(nodes))]
    best_route, best_op = None, None
    for new_nodes in variants:
        cand = Route(agent_id=agent_id, nodes=new_nodes, frozen_prefix_len=f)
        trace = trace_route(cand, agent, scenario, 0.0, agent.position)
        if not trace.feasible:
            continue
        op = costmod.op_cost(trace, agent, ev.op_scale)
        if best_op is None or op.total < best_op - 1e-15:
            best_route, best_op = cand, op.total
    if best_route is None:
        return Proposal(False, "depot_add", agent_id, depot_id, note="no feasible position")
    return Proposal(True, "depot_add", agent_id, depot_id,
                    eval=replace_route(ev, agent_id, best_route))


def propose_depot_remove(ev: StructureEval, agent_id: str, depot_id: str) -> Proposal:
    """Drop an interior depot visit that serves no remaining delivery load."""
    scenario = ev.scenario
    route = ev.routes[agent_id]
    best: Proposal | None = None
    for i in range(max(route.frozen_prefix_len, 1), len(route.nodes) - 1):
        if route.nodes[i].node_ref != depot_id:
            continue
        if _depot_serves_delivery(route, i, scenario):
            continue
        nodes = route.nodes[:i] + route.nodes[i + 1:]
        nodes = _drop_redundant_depots(nodes, route.frozen_prefix_len, scenario)
        cand = Route(agent_id=agent_id, nodes=nodes,
                     frozen_prefix_len=route.frozen_prefix_len)
        agent = scenario.agent(agent_id)
        if not trace_route(cand, agent, scenario, 0.0, agent.position).feasible:
            continue
        new_ev = replace_route(ev, agent_id, cand)
        if best is None or new_ev.total < best.eval.total:
            best = Proposal(True, "depot_remove", agent_id, depot_id, eval=new_ev)
    if best is None:
        return Proposal(False, "depot_remove", agent_id, depot_id,
                        note="no removable visit")
    return best


def accept(candidate_total: float, current_total: float,
           candidate_hash: str, tabu: TabuList) -> bool:
    """Strict improvement and not a tabu revisit."""
    return (candidate_total < current_total - STRICT_EPS) and candidate_hash not in tabu


# --- Nash stability ----------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    witness: tuple[str, str, str] | None   # (agent, op, task)
    witness_count: int


def _improving_moves(ev: StructureEval, first_only: bool):
    scenario = ev.scenario
    out = []
    for agent in scenario.agents:
        route = ev.routes[agent.id]
        mutable = _mutable_task_refs(route, scenario)
        in_route = set(route.refs())
        for m in ev.released_ids:
            if m in mutable:
                prop = propose_remove(ev, agent.id, m)
            elif m not in in_route:
                prop = propose_add(ev, agent.id, m)
            else:
                continue  # frozen membership: no executable deviation
            if prop.feasible and prop.eval.total < ev.total - STRICT_EPS:
                out.append((agent.id, prop.op, m, prop))
                if first_only:
                    return out
    return out


def find_improving_move(ev: StructureEval):
    moves = _improving_moves(ev, first_only=True)
    return moves[0] if moves else None


def is_nash_stable(structure: CoalitionStructure | StructureEval,
                   scenario: Scenario,
                   t_now: float | None = None) -> StabilityReport:
    """No single agent has an improving task ADD or REMOVE available."""
    if isinstance(structure, StructureEval):
        ev = structure
    else:
        ev = full_evaluate(structure.routes, scenario, t_now)
    moves = _improving_moves(ev, first_only=False)
    if not moves:
        return StabilityReport(stable=True, witness=None, witness_count=0)
    aid, op, m, _ = moves[0]
    return StabilityReport(stable=False, witness=(aid, op, m),
                           witness_count=len(moves))


# --- the sweep engine --------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    sweep: int
    agent: str
    target: str
    op: str
    delta: float
    accepted: bool
    idle: int
    tabu_size: int


@dataclass(frozen=True)
class DecisionEvent:
    """Outcome of one accepted or rejected move, for observers.

    Moves applied by the certification pass (not chosen by the policy)
    carry a ``cert_`` prefix on ``op``.
    """
    agent_id: str
    target: str | None
    op: str
    accepted: bool
    total_before: float
    total_after: float
    eval: StructureEval


@dataclass
class SolveResult:
    eval: StructureEval
    termination: str            # "quiescent" | "budget"
    sweeps: int
    decisions: int
    accepted: int
    certified_stable: bool
    initial_total: float
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def structure(self) -> CoalitionStructure:
        return self.eval.structure()

    @property
    def total(self) -> float:
        return self.eval.total


def _classify_target(ev: StructureEval, agent_id: str, target: str):
    scenario = ev.scenario
    route = ev.routes[agent_id]
    if scenario.is_depot(target):
        removable = propose_depot_remove(ev, agent_id, target)
        if removable.feasible:
            return removable
        return propose_depot_add(ev, agent_id, target)
    if target in _mutable_task_refs(route, scenario):
        return propose_remove(ev, agent_id, target)
    if target in _frozen_task_refs(route, scenario):
        return Proposal(False, "noop", agent_id, target, note="frozen membership")
    return propose_add(ev, agent_id, target)


def solve(scenario: Scenario, policy, t_now: float = 0.0,
          warm_start: CoalitionStructure | None = None,
          config: EngineConfig | None = None,
          collect_trace: bool = False,
          on_decision=None) -> SolveResult:
    """Run sweeps of unilateral proposals until certified quiescence or budget."""
    config = config or EngineConfig()
    routes = dict(warm_start.routes) if warm_start is not None \
        else {a.id: empty_route(a) for a in scenario.agents}
    ev = full_evaluate(routes, scenario, t_now)
    tabu = TabuList(config.tabu_capacity)
    rng = np.random.default_rng([int(config.seed), 0xA11])
    trace: list[TraceRow] = []
    initial_total = ev.total
    accepted_count = 0
    decisions = 0
    idle = 0
    termination = "budget"
    certified = False
    k = 0
    done = False

    while k < config.max_sweeps and not done:
        order = sweep_order(len(scenario.agents), config.seed, k)
        for pos in order:
            agent = scenario.agents[int(pos)]
            total_before = ev.total
            target = policy.select(agent.id, ev, scenario, t_now, rng)
            decisions += 1
            delta = 0.0
            did_accept = False
            if target is None:
                op = "none"
                idle += 1
            else:
                prop = _classify_target(ev, agent.id, target)
                op = prop.op
                if prop.feasible:
                    delta = prop.eval.total - ev.total
                    cand_hash = structure_hash(prop.eval.routes)
                    if accept(prop.eval.total, ev.total, cand_hash, tabu):
                        tabu.push(structure_hash(ev.routes))
                        ev = prop.eval
                        did_accept = True
                        accepted_count += 1
                        idle = 0
                    else:
                        idle += 1
                else:
                    idle += 1
            if collect_trace:
                trace.append(TraceRow(k, agent.id, target or "", op, delta,
                                      did_accept, idle, len(tabu)))
            if on_decision is not None:
                on_decision(DecisionEvent(agent_id=agent.id, target=target,
                                          op=op, accepted=did_accept,
                                          total_before=total_before,
                                          total_after=ev.total, eval=ev))
            if idle > config.max_idle:
                move = find_improving_move(ev)
                if move is None:
                    termination = "quiescent"
                    certified = True
                    done = True
                    break
                aid, mop, mid, prop = move
                tabu.push(structure_hash(ev.routes))
                before = ev.total
                delta = prop.eval.total - before
                ev = prop.eval
                accepted_count += 1
                idle = 0
                if collect_trace:
                    trace.append(TraceRow(k, aid, mid, "cert_" + mop, delta,
                                          True, idle, len(tabu)))
                if on_decision is not None:
                    on_decision(DecisionEvent(agent_id=aid, target=mid,
                                              op="cert_" + mop, accepted=True,
                                              total_before=before,
                                              total_after=ev.total, eval=ev))
        k += 1 if not done else 0

    return SolveResult(eval=ev, termination=termination, sweeps=k,
                       decisions=decisions, accepted=accepted_count,
                       certified_stable=certified, initial_total=initial_total,
                       trace=trace)
