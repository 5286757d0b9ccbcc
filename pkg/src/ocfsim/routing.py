"""Routes, arrival-time traces, payload bookkeeping, and insertion search.

A route is a closed node sequence (first and last nodes are depots) with an
immutable frozen prefix of already-executed nodes. Arrival times follow
tau_k = max(node window start, tau_{k-1} + leg/speed); depots never wait.
Payload is two scalars: delivery load (consumed at delivery tasks, reloaded at
depots up to min(capacity, upcoming demand)) and pickup load (grows at pickup
tasks, dropped at depots). Capacity violations mark the trace infeasible, they
are never clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .scenario import Agent, Scenario, TaskKind


def leg_length(p: tuple[float, float], q: tuple[float, float]) -> float:
    """Euclidean distance in meters."""
    return math.hypot(p[0] - q[0], p[1] - q[1])


@dataclass(frozen=True)
class RouteNode:
    node_ref: str
    amount: int = 0  # committed kg; 0 for depot visits


@dataclass(frozen=True)
class Route:
    agent_id: str
    nodes: tuple[RouteNode, ...]
    frozen_prefix_len: int = 0

    def __post_init__(self):
        if self.frozen_prefix_len < 0 or self.frozen_prefix_len > len(self.nodes):
            raise ValueError("frozen_prefix_len out of bounds")

    def refs(self) -> list[str]:
        return [n.node_ref for n in self.nodes]

    def mutable_refs(self) -> list[str]:
        return [n.node_ref for n in self.nodes[self.frozen_prefix_len:]]

    def task_amounts(self, scenario: Scenario) -> dict[str, int]:
        """Committed kg per task over the whole route."""
        return {n.node_ref: n.amount for n in self.nodes if scenario.is_task(n.node_ref)}


def empty_route(agent: Agent) -> Route:
    d = agent.home_depot
    return Route(agent_id=agent.id,
                 nodes=(RouteNode(d), RouteNode(d)),
                 frozen_prefix_len=0)


@dataclass(frozen=True)
class RouteTrace:
    arrival_s: tuple[float, ...]
    delivery_load: tuple[int, ...]   # after serving node k
    pickup_load: tuple[int, ...]
    dist_cum: tuple[float, ...]      # flown distance through node k, start leg included
    feasible: bool
    violation: str | None

    @property
    def total_distance(self) -> float:
        return self.dist_cum[-1] if self.dist_cum else 0.0


def _upcoming_delivery(route: Route, scenario: Scenario) -> list[int]:
    """For each node index, delivery kg scheduled strictly after it up to the next depot."""
    n = len(route.nodes)
    out = [0] * n
    acc = 0
    for k in range(n - 1, -1, -1):
        out[k] = acc
        node = route.nodes[k]
        if scenario.is_depot(node.node_ref):
            acc = 0
        elif scenario.task(node.node_ref).kind is TaskKind.DELIVERY:
            acc += node.amount
    return out


def trace_route(route: Route, agent: Agent, scenario: Scenario,
                start_time: float = 0.0,
                start_pos: tuple[float, float] | None = None,
                start_loads: tuple[int, int] = (0, 0)) -> RouteTrace:
    """Walk the route and record arrivals, loads and cumulative distance."""
    nodes = route.nodes
    if not nodes:
        return RouteTrace((), (), (), (), True, None)
    if not scenario.is_depot(nodes[0].node_ref) or not scenario.is_depot(nodes[-1].node_ref):
        return RouteTrace((), (), (), (), False, "route must start and end at a depot")

    upcoming = _upcoming_delivery(route, scenario)
    delivery, pickup = start_loads
    arrivals: list[float] = []
    dloads: list[int] = []
    ploads: list[int] = []
    dists: list[float] = []
    feasible = True
    violation = None

    t = start_time
    pos = start_pos if start_pos is not None else scenario.node_position(nodes[0].node_ref)
    dist = 0.0
    for k, node in enumerate(nodes):
        npos = scenario.node_position(node.node_ref)
        leg = leg_length(pos, npos)
        dist += leg
        t = t + leg / agent.speed_mps
        if scenario.is_task(node.node_ref):
            task = scenario.task(node.node_ref)
            t = max(task.window_start, t)
            if task.kind is TaskKind.PICKUP:
                pickup += node.amount
            else:
                delivery -= node.amount
                if delivery < 0 and feasible:
                    feasible = False
                    violation = f"delivery load negative at {node.node_ref}"
        else:
            pickup = 0
            delivery = min(agent.capacity_kg, upcoming[k])
        if delivery + pickup > agent.capacity_kg and feasible:
            feasible = False
            violation = f"capacity exceeded at {node.node_ref}"
        arrivals.append(t)
        dloads.append(delivery)
        ploads.append(pickup)
        dists.append(dist)
        pos = npos

    return RouteTrace(tuple(arrivals), tuple(dloads), tuple(ploads), tuple(dists),
                      feasible, violation)


def freeze_until(route: Route, trace: RouteTrace, t: float) -> Route:
    """Mark every node reached by time t as immutable."""
    frozen = sum(1 for a in trace.arrival_s if a <= t)
    return replace(route, frozen_prefix_len=max(route.frozen_prefix_len, frozen))


# --- operating cost of a route ----------------------------------------------

def fleet_op_scale(agents) -> float:
    """Largest possible economic loss in the fleet, the op-cost normalizer."""
    return max(a.energy_rate_per_m * a.max_range_m + a.intrinsic_value for a in agents)


@dataclass(frozen=True)
class RouteOpCost:
    per_leg: tuple[float, ...]  # leg k arrives at node k; sums to total
    total: float
    saturated: bool


def route_op_cost(trace: RouteTrace, agent: Agent, op_scale: float) -> RouteOpCost:
    """Per-leg energy cost, with the over-range loss applied once per route.

    While cumulative distance stays within the agent's range each leg costs
    energy_rate * leg / op_scale. The first leg that crosses the range limit
    pins the route total to (energy_rate * range + intrinsic_value) / op_scale,
    the one-time loss of the vehicle; later legs add nothing.
    """
    per_leg: list[float] = []
    acc = 0.0
    saturated = False
    prev_d = 0.0
    for k, d in enumerate(trace.dist_cum):
        leg = d - prev_d
        prev_d = d
        if saturated:
            per_leg.append(0.0)
            continue
        if d <= agent.max_range_m:
            q = agent.energy_rate_per_m * leg / op_scale
            per_leg.append(q)
            acc += q
        else:
            saturated = True
            total = (agent.energy_rate_per_m * agent.max_range_m
                     + agent.intrinsic_value) / op_scale
            per_leg.append(total - acc)
            acc = total
    return RouteOpCost(tuple(per_leg), acc, saturated)


# --- insertion search --------------------------------------------------------

@dataclass(frozen=True)
class Insertion:
    route: Route
    trace: RouteTrace
    position: int          # index of the inserted task node in the new route
    arrival_s: float
    op_increase: float
    within_range: bool


def _insertion_variants(route: Route, task_ref: str, amount: int,
                        scenario: Scenario, with_depot_rescue: bool):
    """Yield candidate node tuples with the task placed after the frozen prefix."""
    nodes = route.nodes
    L = len(nodes)
    f = route.frozen_prefix_len
    task_node = RouteNode(task_ref, amount)
    depot_ids = [d.id for d in scenario.depots]

    if f >= L:
        # Fully executed route: reopen by appending a fresh loop after the
        # closing depot.
        close = nodes[-1].node_ref
        yield nodes + (task_node, RouteNode(close)), L
        if with_depot_rescue:
            for d in depot_ids:
                yield nodes + (RouteNode(d), task_node, RouteNode(d)), L + 1
        return

    for i in range(max(f, 1), L):
        if not with_depot_rescue:
            yield nodes[:i] + (task_node,) + nodes[i:], i
        else:
            # A depot before the task frees capacity for it; a depot after
            # unloads it before downstream commitments.
            for d in depot_ids:
                yield nodes[:i] + (RouteNode(d), task_node) + nodes[i:], i + 1
                yield nodes[:i] + (task_node, RouteNode(d)) + nodes[i:], i


def _evaluate_variant(new_nodes, pos, route: Route, task_ref: str,
                      agent: Agent, scenario: Scenario, op_scale: float,
                      base_op: float, start_time: float,
                      start_pos, start_loads) -> Insertion | None:
    cand = Route(agent_id=route.agent_id, nodes=new_nodes,
                 frozen_prefix_len=route.frozen_prefix_len)
    trace = trace_route(cand, agent, scenario, start_time, start_pos, start_loads)
    if not trace.feasible:
        return None
    arrival = trace.arrival_s[pos]
    if arrival > scenario.task(task_ref).window_end:
        return None
    op = route_op_cost(trace, agent, op_scale)
    return Insertion(route=cand, trace=trace, position=pos, arrival_s=arrival,
                     op_increase=op.total - base_op,
                     within_range=trace.total_distance <= agent.max_range_m)


def cheapest_insertion(route: Route, task_ref: str, amount: int,
                       scenario: Scenario,
                       start_time: float = 0.0,
                       start_pos: tuple[float, float] | None = None,
                       start_loads: tuple[int, int] = (0, 0),
                       require_range: bool = False) -> Insertion | None:
    """Best feasible placement of a task, minimizing the op-cost increase.

    Tries every position after the frozen prefix (keeping the closing depot
    last). If no plain position is feasible, retries each position with a
    single depot visit immediately before or immediately after the task;
    the depot drops pickups and reloads deliveries, freeing capacity around
    the new commitment. Returns None when no placement passes trace
    feasibility plus the task's own deadline.
    """
    agent = scenario.agent(route.agent_id)
    op_scale = fleet_op_scale(scenario.agents)
    base = route_op_cost(
        trace_route(route, agent, scenario, start_time, start_pos, start_loads),
        agent, op_scale).total

    for rescue in (False, True):
        best: Insertion | None = None
        for new_nodes, pos in _insertion_variants(route, task_ref, amount,
                                                  scenario, rescue):
            ins = _evaluate_variant(new_nodes, pos, route, task_ref, agent,
                                    scenario, op_scale, base,
                                    start_time, start_pos, start_loads)
            if ins is None or (require_range and not ins.within_range):
                continue
            if best is None or ins.op_increase < best.op_increase - 1e-15:
                best = ins
        if best is not None:
            return best
    return None


def insertion_feasible(route: Route, task_ref: str, amount: int,
                       scenario: Scenario,
                       start_time: float = 0.0,
                       start_pos: tuple[float, float] | None = None,
                       require_range: bool = True) -> bool:
    """Existence check used by the policy validity mask (early exit)."""
    agent = scenario.agent(route.agent_id)
    op_scale = fleet_op_scale(scenario.agents)
    for rescue in (False, True):
        for new_nodes, pos in _insertion_variants(route, task_ref, amount,
                                                  scenario, rescue):
            ins = _evaluate_variant(new_nodes, pos, route, task_ref, agent,
                                    scenario, op_scale, 0.0,
                                    start_time, start_pos, (0, 0))
            if ins is not None and (ins.within_range or not require_range):
                return True
    return False


def depot_insertion_feasible(route: Route, depot_id: str, scenario: Scenario,
                             start_time: float = 0.0,
                             start_pos: tuple[float, float] | None = None) -> bool:
    """Whether a visit to this depot fits the route within remaining range."""
    agent = scenario.agent(route.agent_id)
    nodes = route.nodes
    L = len(nodes)
    f = route.frozen_prefix_len
    visit = RouteNode(depot_id)
    if f >= L:
        variants = [nodes + (visit,)]
    else:
        variants = [nodes[:i] + (visit,) + nodes[i:] for i in range(max(f, 1), L)]
    for new_nodes in variants:
        cand = Route(agent_id=route.agent_id, nodes=new_nodes, frozen_prefix_len=f)
        trace = trace_route(cand, agent, scenario, start_time, start_pos)
        if trace.feasible and trace.total_distance <= agent.max_range_m:
            return True
    return False


# --- instantaneous state along a traced route --------------------------------

def position_at(route: Route, trace: RouteTrace, scenario: Scenario, t: float,
                start_pos: tuple[float, float] | None = None) -> tuple[float, float]:
    """Physical position at time t, interpolating along the current leg."""
    nodes = route.nodes
    if not nodes:
        return start_pos if start_pos is not None else (0.0, 0.0)
    if t >= trace.arrival_s[-1]:
        return scenario.node_position(nodes[-1].node_ref)
    prev_pos = start_pos if start_pos is not None else scenario.node_position(nodes[0].node_ref)
    prev_t = 0.0
    for k, node in enumerate(nodes):
        npos = scenario.node_position(node.node_ref)
        if t <= trace.arrival_s[k]:
            leg = leg_length(prev_pos, npos)
            if leg == 0.0:
                return npos
            agent = scenario.agent(route.agent_id)
            # Fly first, then hover until the window opens.
            travelled = min(max(t - prev_t, 0.0) * agent.speed_mps, leg)
            frac = travelled / leg
            return (prev_pos[0] + frac * (npos[0] - prev_pos[0]),
                    prev_pos[1] + frac * (npos[1] - prev_pos[1]))
        prev_pos = npos
        prev_t = trace.arrival_s[k]
    return prev_pos


def loads_at(trace: RouteTrace, t: float) -> tuple[int, int]:
    """(delivery, pickup) on board at time t."""
    delivery, pickup = 0, 0
    for k, a in enumerate(trace.arrival_s):
        if a <= t:
            delivery, pickup = trace.delivery_load[k], trace.pickup_load[k]
        else:
            break
    return delivery, pickup


def remaining_range(trace: RouteTrace, agent: Agent) -> float:
    return agent.max_range_m - trace.total_distance
