"""Decision states, masking, and the three selectors."""

import numpy as np
import pytest

from ocfsim.game import empty_structure, full_evaluate
from ocfsim.policy import (NEG_INF, HeuristicPolicy, LearnedPolicy,
                           RandomPolicy, StateView, build_state,
                           heuristic_select, learned_select, make_policy,
                           masked_softmax, random_select, validity_mask)
from ocfsim.routing import Route, RouteNode, empty_route
from ocfsim.scenario import GeneratorConfig, TaskKind, generate_scenario


def _fake_state(mask, kinds=None, travel=None, in_route=None):
    L = len(mask)
    return StateView(
        agent_id="A_0", t_now=0.0, horizon_s=3600.0,
        agent_vec=np.zeros(8), cand_feats=np.zeros((L, 7)),
        cand_kinds=np.zeros(L, dtype=np.int64) if kinds is None
        else np.asarray(kinds, dtype=np.int64),
        cand_ids=[f"c_{i}" for i in range(L)],
        mask=np.asarray(mask, dtype=float),
        aux_travel_s=np.zeros(L) if travel is None else np.asarray(travel, float),
        aux_residual=np.ones(L, dtype=np.int64),
        aux_demand=np.ones(L, dtype=np.int64),
        aux_in_route=np.zeros(L, dtype=bool) if in_route is None
        else np.asarray(in_route, dtype=bool))


# --- masked softmax -----------------------------------------------------------

def test_masked_softmax_reference_values():
    probs = masked_softmax(np.array([2.0, 1.0, 0.0]),
                           np.array([0.0, NEG_INF, 0.0]))
    # exp(2)/(exp(2)+1) and 1/(exp(2)+1), to 16 digits
    assert probs[0] == pytest.approx(0.8807970779778824, abs=1e-15)
    assert probs[1] == 0.0
    assert probs[2] == pytest.approx(0.11920292202211756, abs=1e-15)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_masked_softmax_single_survivor():
    probs = masked_softmax(np.array([5.0, 5.0]), np.array([0.0, NEG_INF]))
    assert probs.tolist() == [1.0, 0.0]


def test_masked_softmax_fully_masked_raises():
    with pytest.raises(ValueError, match="fully masked"):
        masked_softmax(np.array([1.0, 2.0]), np.array([NEG_INF, NEG_INF]))


def test_masked_softmax_extreme_logits_stay_finite():
    probs = masked_softmax(np.array([1e4, -1e4, 0.0]),
                           np.array([0.0, 0.0, NEG_INF]))
    assert np.all(np.isfinite(probs)) and probs[2] == 0.0
    assert probs[0] == pytest.approx(1.0)


# --- state encoding -------------------------------------------------------------

def test_build_state_fixture_shapes_and_norms(smallscale):
    sc = smallscale
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    assert st.agent_vec.shape == (8,)
    assert st.cand_feats.shape == (6, 7)      # 4 released tasks + 2 depots
    assert st.cand_ids[:4] == ["T_0", "T_1", "T_2", "T_3"]
    assert st.cand_kinds.tolist() == [0, 0, 0, 0, 1, 1]
    # heavy profile against fleet maxima: v 100/200, B 30/30
    assert st.agent_vec[2] == 0.5
    assert st.agent_vec[3] == 1.0
    assert st.agent_vec[4] == 0.0 and st.agent_vec[5] == 0.0
    assert st.agent_vec[7] == 0.0
    assert st.agent_vec[0] == sc.agent("A_0").position[0] / sc.area_side_m

    fast = build_state(ev, "A_1", sc, 0.0)
    assert fast.agent_vec[2] == 1.0
    assert fast.agent_vec[3] == pytest.approx(1 / 3)


def test_build_state_task_row_values(smallscale):
    sc = smallscale
    ev = full_evaluate(empty_structure(sc, 90.0).routes, sc, 90.0)
    st = build_state(ev, "A_0", sc, 90.0)
    assert len(st.cand_ids) == 12
    i = st.cand_ids.index("T_7")
    assert st.aux_residual[i] == 60 and st.aux_demand[i] == 60
    assert st.cand_feats[i, 2] == 1.0          # residual saturates at fleet max
    assert st.cand_feats[i, 3] == 90.0 / 3600.0
    assert st.cand_feats[i, 4] == 140.0 / 3600.0
    assert st.cand_feats[i, 5] == 1.0          # pickup flag
    assert st.cand_feats[i, 6] == pytest.approx(50.0 / 3600.0)
    assert st.agent_vec[7] == 0.025            # 90 / 3600
    # depot rows are kind-tagged with zeroed task features
    for j in range(10, 12):
        assert st.cand_kinds[j] == 1
        assert np.all(st.cand_feats[j, 2:] == 0.0)


def test_build_state_bounded_features():
    sc = generate_scenario(GeneratorConfig(), 21)
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    for agent in sc.agents:
        st = build_state(ev, agent.id, sc, 0.0)
        assert np.all(np.abs(st.agent_vec) <= 1.0)
        assert np.all(np.abs(st.cand_feats) <= 1.0)


def test_build_state_residual_excludes_self(make_world):
    sc = make_world(
        agents=[{}, {}],
        tasks=[("T", TaskKind.PICKUP, (1000.0, 0.0), 60, (0.0, 3600.0), 0.0)])
    serving = Route("A_0", (RouteNode("D_0"), RouteNode("T", 30), RouteNode("D_0")))
    ev = full_evaluate({"A_0": serving, "A_1": empty_route(sc.agent("A_1"))},
                       sc, 0.0)
    own = build_state(ev, "A_0", sc, 0.0)
    other = build_state(ev, "A_1", sc, 0.0)
    i = own.cand_ids.index("T")
    assert own.aux_residual[i] == 60     # what the task still needs without me
    assert other.aux_residual[i] == 30
    assert own.aux_in_route[i] and not other.aux_in_route[i]


# --- validity mask ----------------------------------------------------------------

def test_mask_blocks_deadline_and_range(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T_ok", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0),
               ("T_late", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 5.0), 0.0),
               ("T_far", TaskKind.PICKUP, (40000.0, 0.0), 5, (0.0, 3600.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    by_id = dict(zip(st.cand_ids, st.mask))
    assert by_id["T_ok"] == 0.0
    assert by_id["T_late"] == NEG_INF
    assert by_id["T_far"] == NEG_INF   # 80 km round trip on a 60 km tank
    assert by_id["D_0"] == 0.0


def test_mask_keeps_remove_open_after_deadline(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 12.0), 0.0)])
    serving = Route("A_0", (RouteNode("D_0"), RouteNode("T", 5), RouteNode("D_0")))
    ev = full_evaluate({"A_0": serving}, sc, 0.0)
    st = build_state(ev, "A_0", sc, 600.0)
    # joining is long impossible, but leaving the coalition still is a move
    assert st.mask[st.cand_ids.index("T")] == 0.0


def test_mask_blocks_frozen_membership(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0)])
    pinned = Route("A_0", (RouteNode("D_0"), RouteNode("T", 5),
                           RouteNode("D_0")), frozen_prefix_len=2)
    ev = full_evaluate({"A_0": pinned}, sc, 0.0)
    mask = validity_mask(ev, "A_0", sc, ["T", "D_0"])
    assert mask[0] == NEG_INF and mask[1] == 0.0


def test_mask_blocks_unreachable_depot(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0)],
        depots=[("D_0", (0.0, 0.0)), ("D_far", (100_000.0, 0.0))])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    by_id = dict(zip(st.cand_ids, st.mask))
    assert by_id["D_0"] == 0.0 and by_id["D_far"] == NEG_INF


# --- random selector -----------------------------------------------------------------

def test_random_select_edges():
    rng = np.random.default_rng(0)
    assert random_select(_fake_state([NEG_INF, 0.0, NEG_INF]), rng) == 1
    assert random_select(_fake_state([NEG_INF, NEG_INF]), rng) is None


def test_random_select_uniform_without_leakage():
    state = _fake_state([0.0, 0.0, 0.0, 0.0, NEG_INF])
    rng = np.random.default_rng(123)
    counts = np.zeros(5, dtype=int)
    for _ in range(100_000):
        counts[random_select(state, rng)] += 1
    assert counts[4] == 0
    for c in counts[:4]:
        assert abs(c - 25_000) <= 411  # 3 sigma


# --- heuristic selector -----------------------------------------------------------------

def test_heuristic_prefers_near_when_equally_urgent(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T_far", TaskKind.PICKUP, (2000.0, 0.0), 5, (0.0, 20.0), 0.0),
               ("T_near", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 10.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    assert st.cand_ids[heuristic_select(st)] == "T_near"


def test_heuristic_prefers_urgent_when_equidistant(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T_lazy", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0),
               ("T_hot", TaskKind.PICKUP, (-1000.0, 0.0), 5, (0.0, 100.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    assert st.cand_ids[heuristic_select(st)] == "T_hot"


def test_heuristic_prefers_uncovered_demand(make_world):
    sc = make_world(
        agents=[{}, {}],
        tasks=[("T_done", TaskKind.PICKUP, (1000.0, 0.0), 10, (0.0, 60.0), 0.0),
               ("T_open", TaskKind.PICKUP, (3000.0, 0.0), 10, (0.0, 3600.0), 0.0)])
    serving = Route("A_0", (RouteNode("D_0"), RouteNode("T_done", 10),
                            RouteNode("D_0")))
    ev = full_evaluate({"A_0": serving, "A_1": empty_route(sc.agent("A_1"))},
                       sc, 0.0)
    st = build_state(ev, "A_1", sc, 0.0)
    assert st.aux_residual[st.cand_ids.index("T_done")] == 0
    assert st.cand_ids[heuristic_select(st)] == "T_open"


def test_heuristic_tie_takes_first_declared(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T_a", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 60.0), 0.0),
               ("T_b", TaskKind.PICKUP, (0.0, 1000.0), 5, (0.0, 60.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    assert st.cand_ids[heuristic_select(st)] == "T_a"


def test_heuristic_falls_back_to_nearest_depot(make_world):
    sc = make_world(
        agents=[{}],
        tasks=[("T", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0)],
        depots=[("D_0", (0.0, 0.0)), ("D_1", (5000.0, 0.0))])
    serving = Route("A_0", (RouteNode("D_0"), RouteNode("T", 5), RouteNode("D_0")))
    ev = full_evaluate({"A_0": serving}, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    # own task is the engine's REMOVE business, not a join candidate
    assert st.cand_ids[heuristic_select(st)] == "D_0"


def test_heuristic_none_when_nothing_usable():
    st = _fake_state([NEG_INF, NEG_INF], kinds=[0, 1])
    assert heuristic_select(st) is None


def _heuristic_oracle(state):
    H = state.horizon_s
    scored = []
    for i in range(state.n_candidates):
        if state.cand_kinds[i] != 0 or state.mask[i] == NEG_INF \
                or state.aux_in_route[i]:
            continue
        travel = state.aux_travel_s[i]
        earliest = max(state.cand_feats[i, 3] * H, state.t_now + travel)
        slack = min(max((state.cand_feats[i, 4] * H - earliest) / H, 0.0), 1.0)
        s = (state.aux_residual[i] / state.aux_demand[i]) * (1.0 - slack) \
            / (1.0 + travel / H)
        scored.append((s, i))
    if scored:
        best = max(scored, key=lambda p: p[0])[0]
        return next(i for s, i in scored if s == best)
    depots = [(state.aux_travel_s[i], i) for i in range(state.n_candidates)
              if state.cand_kinds[i] == 1 and state.mask[i] != NEG_INF]
    if not depots:
        return None
    best = min(depots, key=lambda p: p[0])[0]
    return next(i for t, i in depots if t == best)


def test_heuristic_matches_score_oracle():
    for seed in (300, 301, 302):
        sc = generate_scenario(GeneratorConfig(), seed)
        ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
        for agent in sc.agents:
            st = build_state(ev, agent.id, sc, 0.0)
            assert heuristic_select(st) == _heuristic_oracle(st)


# --- learned selector ---------------------------------------------------------------

def test_learned_select_greedy_is_argmax(make_world, tiny_net):
    from ocfsim.tsac.net import policy_logits
    sc = make_world(
        agents=[{}],
        tasks=[("T_a", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0),
               ("T_b", TaskKind.PICKUP, (2000.0, 0.0), 5, (0.0, 3600.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    probs = masked_softmax(policy_logits(tiny_net, st.agent_vec, st.cand_feats,
                                         st.cand_kinds), st.mask)
    assert learned_select(st, tiny_net, "greedy") == int(np.argmax(probs))
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_learned_select_sampling(make_world, tiny_net):
    sc = make_world(
        agents=[{}],
        tasks=[("T_a", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0),
               ("T_late", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 5.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    st = build_state(ev, "A_0", sc, 0.0)
    masked = st.cand_ids.index("T_late")
    draws = {learned_select(st, tiny_net, "sample", np.random.default_rng(k))
             for k in range(200)}
    assert masked not in draws
    a = learned_select(st, tiny_net, "sample", np.random.default_rng(5))
    b = learned_select(st, tiny_net, "sample", np.random.default_rng(5))
    assert a == b
    with pytest.raises(ValueError, match="needs an rng"):
        learned_select(st, tiny_net, "sample")
    with pytest.raises(ValueError, match="unknown selection mode"):
        learned_select(st, tiny_net, "softmax")


def test_learned_select_fully_masked_is_none(tiny_net):
    st = _fake_state([NEG_INF, NEG_INF])
    assert learned_select(st, tiny_net, "greedy") is None
    assert learned_select(st, tiny_net, "sample",
                          np.random.default_rng(0)) is None


# --- dispatch ------------------------------------------------------------------------

def test_make_policy_dispatch(tmp_path, tiny_net):
    assert isinstance(make_policy("random"), RandomPolicy)
    assert isinstance(make_policy("heuristic"), HeuristicPolicy)
    with pytest.raises(ValueError, match="checkpoint"):
        make_policy("tsac")
    with pytest.raises(ValueError, match="unknown policy"):
        make_policy("greedy")
    from ocfsim.tsac.checkpoint import save_checkpoint
    path = tmp_path / "net.npz"
    save_checkpoint(tiny_net, str(path))
    pol = make_policy("tsac", checkpoint_path=str(path), mode="sample")
    assert isinstance(pol, LearnedPolicy) and pol.mode == "sample"
    with pytest.raises(ValueError, match="unknown selection mode"):
        LearnedPolicy(tiny_net, mode="best")


def test_policy_objects_return_candidate_ids(make_world, tiny_net):
    sc = make_world(
        agents=[{}],
        tasks=[("T", TaskKind.PICKUP, (1000.0, 0.0), 5, (0.0, 3600.0), 0.0)])
    ev = full_evaluate(empty_structure(sc).routes, sc, 0.0)
    rng = np.random.default_rng(0)
    assert HeuristicPolicy().select("A_0", ev, sc, 0.0, rng) == "T"
    assert RandomPolicy().select("A_0", ev, sc, 0.0, rng) in {"T", "D_0"}
    got = LearnedPolicy(tiny_net).select("A_0", ev, sc, 0.0, rng)
    assert got in {"T", "D_0"}
