"""Shared fixtures: the shipped small-scale world, cheap generated scenarios,
a micro-world factory for hand-sized oracles, and a tiny network."""

import numpy as np
import pytest

from ocfsim.game import empty_structure, full_evaluate
from ocfsim.policy import build_state
from ocfsim.scenario import (Agent, AgentKind, Depot, GeneratorConfig,
                             Scenario, Task, TaskKind, generate_scenario,
                             small_scale_fixture)
from ocfsim.tsac.net import NetConfig, init_net
from ocfsim.tsac.replay import Transition, padded_batch


@pytest.fixture(scope="session")
def smallscale():
    return small_scale_fixture()


@pytest.fixture
def gen_static():
    return GeneratorConfig(arrival_fraction=0.0)


@pytest.fixture
def tiny_cfg():
    return NetConfig(d_model=16, n_heads=2, n_layers=2, hidden=16)


@pytest.fixture
def tiny_net(tiny_cfg):
    return init_net(tiny_cfg, seed=3)


def _agent(i, kind, pos, home, speed=None, cap=None, rng=None,
           rate=None, lam=None):
    defaults = {
        AgentKind.HEAVY: (100.0, 30, 60_000.0, 0.020, 2000.0),
        AgentKind.FAST: (200.0, 10, 30_000.0, 0.010, 500.0),
    }[kind]
    return Agent(id=f"A_{i}", kind=kind, position=pos,
                 speed_mps=speed if speed is not None else defaults[0],
                 capacity_kg=cap if cap is not None else defaults[1],
                 max_range_m=rng if rng is not None else defaults[2],
                 energy_rate_per_m=rate if rate is not None else defaults[3],
                 intrinsic_value=lam if lam is not None else defaults[4],
                 home_depot=home)


@pytest.fixture
def make_world():
    """Factory for hand-sized scenarios.

    agents: list of dicts passed to _agent (kind defaults to heavy).
    tasks:  list of (id, kind, pos, demand, window, release) tuples.
    depots: list of (id, pos) tuples, default a single depot at the origin.
    """
    def build(agents, tasks, depots=None, weights=(100.0, 10.0, 1.0),
              horizon=3600.0):
        depots = depots or [("D_0", (0.0, 0.0))]
        dep = tuple(Depot(id=i, position=p) for i, p in depots)
        ag = []
        for i, spec in enumerate(agents):
            spec = dict(spec)
            kind = spec.pop("kind", AgentKind.HEAVY)
            pos = spec.pop("pos", dep[0].position)
            home = spec.pop("home", dep[0].id)
            ag.append(_agent(i, kind, pos, home, **spec))
        tk = tuple(Task(id=t[0], kind=t[1], position=t[2], demand_kg=t[3],
                        window_s=t[4], release_s=t[5]) for t in tasks)
        return Scenario(agents=tuple(ag), tasks=tk, depots=dep,
                        weights=weights, horizon_s=horizon)
    return build


@pytest.fixture
def transition_batch():
    """Transitions built from real decision states of generated scenarios."""
    gen = GeneratorConfig()
    rng = np.random.default_rng(7)
    transitions = []
    for s in range(3):
        sc = generate_scenario(gen, 500 + s)
        ev = full_evaluate(empty_structure(sc, 0.0).routes, sc, 0.0)
        for ag in sc.agents:
            st = build_state(ev, ag.id, sc, 0.0)
            unmasked = np.flatnonzero(st.mask == 0.0)
            if unmasked.size == 0:
                continue
            a = int(rng.choice(unmasked))
            transitions.append(Transition(
                agent_vec=st.agent_vec, cand_feats=st.cand_feats,
                cand_kinds=st.cand_kinds, mask=st.mask, action=a,
                reward=float(rng.normal()), done=bool(rng.integers(2)),
                next_agent_vec=st.agent_vec, next_cand_feats=st.cand_feats,
                next_cand_kinds=st.cand_kinds, next_mask=st.mask))
    return transitions, padded_batch(transitions)
