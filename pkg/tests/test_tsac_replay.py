"""Transition storage and padded batching."""

import numpy as np
import pytest

from ocfsim.tsac.replay import (NEG_INF, ReplayBuffer, Transition,
                                padded_batch)


def _t(l=3, action=0, reward=0.0, done=False, mask=None):
    mask = np.zeros(l) if mask is None else np.asarray(mask, float)
    return Transition(
        agent_vec=np.zeros(8), cand_feats=np.full((l, 7), float(l)),
        cand_kinds=np.zeros(l, dtype=np.int64), mask=mask,
        action=action, reward=reward, done=done,
        next_agent_vec=np.zeros(8), next_cand_feats=np.full((l, 7), float(l)),
        next_cand_kinds=np.zeros(l, dtype=np.int64), next_mask=np.zeros(l))


def test_transition_validates_action():
    with pytest.raises(ValueError, match="out of range"):
        _t(l=3, action=3)
    with pytest.raises(ValueError, match="out of range"):
        _t(l=3, action=-1)
    with pytest.raises(ValueError, match="was masked"):
        _t(l=3, action=1, mask=[0.0, NEG_INF, 0.0])


def test_buffer_fifo_overwrite():
    buf = ReplayBuffer(3)
    items = [_t(reward=float(i)) for i in range(5)]
    for t in items[:3]:
        buf.push(t)
    assert len(buf) == 3
    buf.push(items[3])  # displaces the oldest
    assert len(buf) == 3
    rewards = {t.reward for t in buf._data}
    assert rewards == {1.0, 2.0, 3.0}
    buf.push(items[4])
    assert {t.reward for t in buf._data} == {2.0, 3.0, 4.0}


def test_buffer_validation_and_sampling():
    with pytest.raises(ValueError, match="capacity"):
        ReplayBuffer(0)
    buf = ReplayBuffer(8)
    with pytest.raises(ValueError, match="empty"):
        buf.sample(1, np.random.default_rng(0))
    for i in range(4):
        buf.push(_t(reward=float(i)))
    a = buf.sample(6, np.random.default_rng(7))
    b = buf.sample(6, np.random.default_rng(7))
    assert [t.reward for t in a] == [t.reward for t in b]
    assert all(t.reward in {0.0, 1.0, 2.0, 3.0} for t in a)


def test_padded_batch_layout():
    batch = padded_batch([_t(l=2, action=1, reward=0.5, done=True),
                          _t(l=3, action=2)])
    assert batch.size == 2
    assert batch.lengths.tolist() == [2, 3]
    assert batch.pmask.tolist() == [[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]
    assert batch.amask[0].tolist() == [0.0, 0.0, NEG_INF]
    assert batch.amask[1].tolist() == [0.0, 0.0, 0.0]
    assert np.all(batch.C[0, 2] == 0.0)          # pad rows zero-filled
    assert np.all(batch.C[0, :2] == 2.0)
    assert batch.actions.tolist() == [1, 2]
    assert batch.rewards.tolist() == [0.5, 0.0]
    assert batch.dones.tolist() == [1.0, 0.0]
    assert batch.next_pmask.shape == (2, 3)


def test_padded_batch_rejects_empty():
    with pytest.raises(ValueError, match="at least one"):
        padded_batch([])


def test_padded_batch_on_real_states(transition_batch):
    transitions, batch = transition_batch
    assert batch.size == len(transitions) >= 8
    assert np.array_equal(batch.pmask.sum(axis=1), batch.lengths)
    # stored actions are always unmasked in the padded action mask
    rows = np.arange(batch.size)
    assert np.all(batch.amask[rows, batch.actions] == 0.0)
    assert np.all(batch.amask[batch.pmask == 0.0] == NEG_INF)
