"""Replay storage for variable-length decision states, with padded batching.

Sequences are padded to the longest state in the batch. P_mask[i][j] = 1 iff
position j is a real candidate of transition i; the action mask additionally
carries -inf at masked candidates and at padded positions, so downstream
softmaxes put exactly zero probability there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Transition:
    agent_vec: np.ndarray        # [agent_dim]
    cand_feats: np.ndarray       # [l, cand_dim]
    cand_kinds: np.ndarray       # [l]
    mask: np.ndarray             # [l] 0 / -inf
    action: int
    reward: float
    done: bool
    next_agent_vec: np.ndarray
    next_cand_feats: np.ndarray
    next_cand_kinds: np.ndarray
    next_mask: np.ndarray

    def __post_init__(self):
        if not (0 <= self.action < len(self.cand_kinds)):
            raise ValueError("action index out of range")
        if self.mask[self.action] != 0.0:
            raise ValueError("stored action was masked in its state")


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform random sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._data: list[Transition] = []
        self._next = 0

    def push(self, t: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(t)
        else:
            self._data[self._next] = t
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._data)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._data:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._data), size=batch_size)
        return [self._data[int(i)] for i in idx]


@dataclass
class Batch:
    A: np.ndarray            # [B, agent_dim]
    C: np.ndarray            # [B, Lmax, cand_dim]
    kinds: np.ndarray        # [B, Lmax]
    pmask: np.ndarray        # [B, Lmax] 1 valid / 0 pad
    amask: np.ndarray        # [B, Lmax] 0 / -inf (pads are -inf)
    actions: np.ndarray      # [B]
    rewards: np.ndarray      # [B]
    dones: np.ndarray        # [B] 0/1
    next_A: np.ndarray
    next_C: np.ndarray
    next_kinds: np.ndarray
    next_pmask: np.ndarray
    next_amask: np.ndarray
    lengths: np.ndarray
    next_lengths: np.ndarray

    @property
    def size(self) -> int:
        return len(self.actions)


def _pad_states(vecs, feats, kinds, masks):
    B = len(vecs)
    lengths = np.array([len(k) for k in kinds], dtype=np.int64)
    L = int(lengths.max())
    cand_dim = feats[0].shape[-1]
    C = np.zeros((B, L, cand_dim))
    kd = np.zeros((B, L), dtype=np.int64)
    pmask = np.zeros((B, L))
    amask = np.full((B, L), NEG_INF)
    for i in range(B):
        l = lengths[i]
        C[i, :l] = feats[i]
        kd[i, :l] = kinds[i]
        pmask[i, :l] = 1.0
        amask[i, :l] = masks[i]
    return np.stack(vecs), C, kd, pmask, amask, lengths


def padded_batch(transitions: list[Transition]) -> Batch:
    if not transitions:
        raise ValueError("padded_batch needs at least one transition")
    A, C, kd, pm, am, lens = _pad_states(
        [t.agent_vec for t in transitions],
        [t.cand_feats for t in transitions],
        [t.cand_kinds for t in transitions],
        [t.mask for t in transitions])
    nA, nC, nkd, npm, nam, nlens = _pad_states(
        [t.next_agent_vec for t in transitions],
        [t.next_cand_feats for t in transitions],
        [t.next_cand_kinds for t in transitions],
        [t.next_mask for t in transitions])
    return Batch(
        A=A, C=C, kinds=kd, pmask=pm, amask=am,
        actions=np.array([t.action for t in transitions], dtype=np.int64),
        rewards=np.array([t.reward for t in transitions]),
        dones=np.array([1.0 if t.done else 0.0 for t in transitions]),
        next_A=nA, next_C=nC, next_kinds=nkd, next_pmask=npm, next_amask=nam,
        lengths=lens, next_lengths=nlens)
