"""Decision state encoding and task-selection policies.

A deciding agent sees itself (8 features) plus one row per candidate: every
released task and every depot (7 features each), all normalized to [-1, 1] by
scenario-level scales. A validity mask marks candidates with no executable
operation as -inf; selection never returns a masked candidate.

Selectors come in three flavors with one interface: uniform random over
unmasked candidates, a deterministic residual/urgency/proximity heuristic,
and a masked-softmax readout of a trained network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import game
from .routing import (depot_insertion_feasible, insertion_feasible, leg_length,
                      loads_at, position_at, remaining_range)
from .scenario import Scenario, TaskKind

NEG_INF = float("-inf")


@dataclass
class StateView:
    """One agent's view of the structure at decision time.

    agent_vec and cand_feats are the normalized network inputs; the aux_*
    arrays carry raw quantities (travel seconds, residual and total demand kg,
    own-route membership) for the heuristic, which needs unclamped values.
    """
    agent_id: str
    t_now: float
    horizon_s: float
    agent_vec: np.ndarray    # [8]
    cand_feats: np.ndarray   # [L, 7]
    cand_kinds: np.ndarray   # [L] 0 = task, 1 = depot
    cand_ids: list[str]
    mask: np.ndarray         # [L], 0.0 or -inf
    aux_travel_s: np.ndarray
    aux_residual: np.ndarray
    aux_demand: np.ndarray
    aux_in_route: np.ndarray

    @property
    def n_candidates(self) -> int:
        return len(self.cand_ids)

    def unmasked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask == 0.0)


def validity_mask(ev: game.StructureEval, agent_id: str, scenario: Scenario,
                  cand_ids: list[str]) -> np.ndarray:
    """0 where some operation is executable, -inf otherwise.

    A task already in the agent's mutable route is always executable (release).
    A task only in the frozen prefix admits no operation. Otherwise the task is
    executable iff a 1 kg probe insertion fits somewhere: in-window arrival,
    no capacity break, within flight range (single depot-stop rescue counts).
    Depots are masked only when no visit fits the remaining range and no
    spare visit is removable.
    """
    route = ev.routes[agent_id]
    agent = scenario.agent(agent_id)
    mutable = {r for r in route.mutable_refs() if scenario.is_task(r)}
    frozen = {n.node_ref for n in route.nodes[:route.frozen_prefix_len]
              if scenario.is_task(n.node_ref)}
    mask = np.zeros(len(cand_ids))
    for i, ref in enumerate(cand_ids):
        if scenario.is_depot(ref):
            removable = game.propose_depot_remove(ev, agent_id, ref).feasible
            if not removable and not depot_insertion_feasible(
                    route, ref, scenario, start_pos=agent.position):
                mask[i] = NEG_INF
            continue
        if ref in mutable:
            continue
        if ref in frozen:
            mask[i] = NEG_INF
            continue
        if not insertion_feasible(route, ref, 1, scenario,
                                  start_pos=agent.position, require_range=True):
            mask[i] = NEG_INF
    return mask


def build_state(ev: game.StructureEval, agent_id: str, scenario: Scenario,
                t_now: float) -> StateView:
    agent = scenario.agent(agent_id)
    route = ev.routes[agent_id]
    trace = ev.traces[agent_id]
    area = scenario.area_side_m
    horizon = scenario.horizon_s
    v_max = scenario.fleet_max_speed
    b_max = float(scenario.fleet_max_capacity)
    r_max = scenario.fleet_max_range

    pos = position_at(route, trace, scenario, t_now, start_pos=agent.position)
    d_load, p_load = loads_at(trace, t_now)
    agent_vec = np.array([
        pos[0] / area,
        pos[1] / area,
        agent.speed_mps / v_max,
        agent.capacity_kg / b_max,
        d_load / b_max,
        p_load / b_max,
        float(np.clip(remaining_range(trace, agent) / r_max, -1.0, 1.0)),
        t_now / horizon,
    ])

    cand_ids = list(ev.released_ids) + [d.id for d in scenario.depots]
    n_tasks = len(ev.released_ids)
    in_route = set(route.refs())
    L = len(cand_ids)
    feats = np.zeros((L, 7))
    kinds = np.zeros(L, dtype=np.int64)
    travel = np.zeros(L)
    residual = np.zeros(L, dtype=np.int64)
    demand = np.ones(L, dtype=np.int64)
    member = np.zeros(L, dtype=bool)
    for i, ref in enumerate(cand_ids):
        npos = scenario.node_position(ref)
        travel[i] = leg_length(pos, npos) / agent.speed_mps
        member[i] = ref in in_route
        if i < n_tasks:
            task = scenario.task(ref)
            residual[i] = game.residual_demand(ref, ev, excluding=agent_id)
            demand[i] = task.demand_kg
            feats[i] = [
                npos[0] / area,
                npos[1] / area,
                min(residual[i] / b_max, 1.0),
                task.window_start / horizon,
                task.window_end / horizon,
                1.0 if task.kind is TaskKind.PICKUP else 0.0,
                float(np.clip((task.window_end - t_now) / horizon, -1.0, 1.0)),
            ]
        else:
            feats[i, 0] = npos[0] / area
            feats[i, 1] = npos[1] / area
            kinds[i] = 1

    mask = validity_mask(ev, agent_id, scenario, cand_ids)
    return StateView(agent_id=agent_id, t_now=t_now, horizon_s=horizon,
                     agent_vec=agent_vec, cand_feats=feats, cand_kinds=kinds,
                     cand_ids=cand_ids, mask=mask, aux_travel_s=travel,
                     aux_residual=residual, aux_demand=demand,
                     aux_in_route=member)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Distribution over unmasked entries; masked entries get exactly 0."""
    z = logits + mask
    top = np.max(z)
    if top == NEG_INF:
        raise ValueError("softmax over a fully masked candidate set")
    e = np.exp(z - top)
    return e / e.sum()


# --- the three selectors ------------------------------------------------------

def random_select(state: StateView, rng: np.random.Generator) -> int | None:
    """Uniform over unmasked candidates; None when everything is masked."""
    idx = state.unmasked_indices()
    if idx.size == 0:
        return None
    return int(idx[rng.integers(idx.size)])


def heuristic_select(state: StateView) -> int | None:
    """Deterministic scoring of join candidates.

    score(m) = (residual/demand) * (1 - slack) / (1 + travel_time/horizon),
    slack = clamp((window_end - earliest_arrival)/horizon, 0, 1). Ties go to
    the earlier-declared task. Falls back to the nearest unmasked depot when
    no join candidate exists; tasks the agent already serves are left to the
    engine's REMOVE path and never chosen here.
    """
    # Feature columns: 3 = window_start/H, 4 = window_end/H.
    H = state.horizon_s
    best, best_score = None, 0.0
    for i in range(state.n_candidates):
        if state.cand_kinds[i] != 0 or state.mask[i] == NEG_INF \
                or state.aux_in_route[i]:
            continue
        travel = state.aux_travel_s[i]
        earliest = max(state.cand_feats[i, 3] * H, state.t_now + travel)
        slack = float(np.clip((state.cand_feats[i, 4] * H - earliest) / H,
                              0.0, 1.0))
        score = ((state.aux_residual[i] / state.aux_demand[i])
                 * (1.0 - slack) / (1.0 + travel / H))
        if best is None or score > best_score:
            best, best_score = i, score

    if best is not None:
        return best

    depot_best, depot_travel = None, None
    for i in range(state.n_candidates):
        if state.cand_kinds[i] != 1 or state.mask[i] == NEG_INF:
            continue
        if depot_travel is None or state.aux_travel_s[i] < depot_travel:
            depot_best, depot_travel = i, state.aux_travel_s[i]
    return depot_best


def learned_select(state: StateView, net, mode: str,
                   rng: np.random.Generator | None = None) -> int | None:
    """Masked-softmax readout of the network; sample online, argmax for eval."""
    from .tsac.net import policy_logits
    if state.unmasked_indices().size == 0:
        return None
    logits = policy_logits(net, state.agent_vec, state.cand_feats,
                           state.cand_kinds)
    probs = masked_softmax(logits, state.mask)
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling mode needs an rng")
        return int(rng.choice(len(probs), p=probs))
    if mode == "greedy":
        return int(np.argmax(probs))
    raise ValueError(f"unknown selection mode {mode!r}")


# --- engine-facing policy objects ----------------------------------------------

class RandomPolicy:
    """Uniform choice over unmasked candidates."""

    def select(self, agent_id: str, ev: game.StructureEval, scenario: Scenario,
               t_now: float, rng: np.random.Generator) -> str | None:
        state = build_state(ev, agent_id, scenario, t_now)
        idx = random_select(state, rng)
        return None if idx is None else state.cand_ids[idx]


class HeuristicPolicy:
    """Deterministic urgency/residual/proximity scoring (see heuristic_select)."""

    def select(self, agent_id: str, ev: game.StructureEval, scenario: Scenario,
               t_now: float, rng: np.random.Generator) -> str | None:
        state = build_state(ev, agent_id, scenario, t_now)
        idx = heuristic_select(state)
        return None if idx is None else state.cand_ids[idx]


class LearnedPolicy:
    """Masked-softmax selection from a trained network."""

    def __init__(self, net, mode: str = "greedy"):
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown selection mode {mode!r}")
        self.net = net
        self.mode = mode

    def select(self, agent_id: str, ev: game.StructureEval, scenario: Scenario,
               t_now: float, rng: np.random.Generator) -> str | None:
        state = build_state(ev, agent_id, scenario, t_now)
        idx = learned_select(state, self.net, self.mode, rng)
        return None if idx is None else state.cand_ids[idx]


def make_policy(name: str, checkpoint_path: str | None = None,
                mode: str = "greedy"):
    if name == "random":
        return RandomPolicy()
    if name == "heuristic":
        return HeuristicPolicy()
    if name == "tsac":
        if checkpoint_path is None:
            raise ValueError("tsac policy needs a checkpoint path")
        from .tsac.checkpoint import load_checkpoint
        return LearnedPolicy(load_checkpoint(checkpoint_path), mode=mode)
    raise ValueError(f"unknown policy {name!r}")
