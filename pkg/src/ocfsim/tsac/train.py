"""Soft actor-critic trainer over the coalition game.

One environment step is one acted decision inside the event-driven simulation.
Every decision lands in the replay buffer: the reward is the normalized drop
in global cost (zero when the engine rejects the move), so an episode's return
telescopes to the total improvement achieved. Each env step performs one joint
gradient step: critic and actor gradients are computed at the same parameters,
summed, and applied with a single momentum update, then the target critic
heads are polyak-averaged. A joint step keeps the momentum state well defined
on the shared trunk, which both losses touch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..game import DecisionEvent, EngineConfig
from ..harness import simulate
from ..policy import NEG_INF, StateView, build_state, masked_softmax
from ..scenario import GeneratorConfig, generate_scenario
from .checkpoint import save_checkpoint
from .losses import actor_loss, critic_loss, target_value
from .net import NetConfig, PolicyNet, init_net, policy_logits, polyak_update
from .replay import ReplayBuffer, Transition, padded_batch


class TrainingDivergence(RuntimeError):
    """A loss went non-finite; training state is unusable."""


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    alpha_ent: float = 0.2
    lr: float = 3e-4
    batch_size: int = 64
    replay_capacity: int = 50_000
    polyak: float = 0.005
    grad_steps_per_env_step: int = 1
    total_env_steps: int = 2000
    warmup_steps: int = 200          # env steps before gradient updates start
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.alpha_ent < 0.0:
            raise ValueError("alpha_ent must be >= 0")
        if not 0.0 < self.polyak <= 1.0:
            raise ValueError("polyak must lie in (0, 1]")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("replay capacity must hold at least one batch")


@dataclass(frozen=True)
class EpisodeRow:
    episode: int
    env_steps: int
    episode_return: float
    final_total: float
    mean_entropy: float


@dataclass
class TrainResult:
    net: PolicyNet
    history: list[EpisodeRow]
    env_steps: int
    grad_steps: int


class SGDMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            v = self.velocity.get(name)
            v = self.momentum * v + g if v is not None else g.copy()
            self.velocity[name] = v
            params[name] -= self.lr * v


def reward(total_before: float, total_after: float,
           weights: tuple[float, float, float]) -> float:
    """Normalized cost improvement; ~1 when a whole task is served cleanly."""
    w1, w2, _ = weights
    return (total_before - total_after) / (w1 + w2)


class OnlineSampler:
    """Policy adapter that samples from the live network and records
    (state, action) pairs so the decision hook can complete transitions."""

    def __init__(self, net: PolicyNet, rng: np.random.Generator):
        self.net = net
        self.rng = rng
        self.pending: dict[str, list] = {}   # agent -> [state, action, reward]
        self.completed: list[Transition] = []
        self.entropies: list[float] = []

    def _complete(self, agent_id: str, next_state: StateView,
                  done: bool) -> None:
        slot = self.pending.pop(agent_id, None)
        if slot is None:
            return
        state, action, rew = slot
        if rew is None:      # decision never reached the engine; drop it
            return
        self.completed.append(Transition(
            agent_vec=state.agent_vec, cand_feats=state.cand_feats,
            cand_kinds=state.cand_kinds, mask=state.mask,
            action=action, reward=rew, done=done,
            next_agent_vec=next_state.agent_vec,
            next_cand_feats=next_state.cand_feats,
            next_cand_kinds=next_state.cand_kinds,
            next_mask=next_state.mask))

    def select(self, agent_id: str, ev, scenario, t_now, rng) -> str | None:
        state = build_state(ev, agent_id, scenario, t_now)
        if not np.any(state.mask > NEG_INF):
            # Not a decision point; the open transition waits for one (a
            # fully masked next state would poison the bootstrap softmax).
            return None
        self._complete(agent_id, state, done=False)
        logits = policy_logits(self.net, state.agent_vec, state.cand_feats,
                               state.cand_kinds)
        probs = masked_softmax(logits, state.mask)
        live = probs > 0.0
        self.entropies.append(float(-(probs[live] * np.log(probs[live])).sum()))
        action = int(self.rng.choice(len(probs), p=probs))
        self.pending[agent_id] = [state, action, None]
        return state.cand_ids[action]

    def note_outcome(self, evt: DecisionEvent,
                     weights: tuple[float, float, float]) -> None:
        if evt.target is None or evt.op.startswith("cert_"):
            return
        slot = self.pending.get(evt.agent_id)
        if slot is not None and slot[2] is None:
            slot[2] = reward(evt.total_before, evt.total_after, weights) \
                if evt.accepted else 0.0

    def flush_episode(self) -> None:
        """Terminal transitions: done masks out bootstrapping, so the stored
        next state is the same state (shapes stay valid, value unused)."""
        for agent_id in list(self.pending):
            slot = self.pending[agent_id]
            state = slot[0]
            self._complete(agent_id, state, done=True)
        self.pending.clear()


def _grad_step(net: PolicyNet, opt: SGDMomentum, replay: ReplayBuffer,
               cfg: TrainConfig, rng: np.random.Generator) -> None:
    batch = padded_batch(replay.sample(cfg.batch_size, rng))
    y = target_value(net, batch, cfg.gamma, cfg.alpha_ent)
    j1, j2, critic_grads = critic_loss(net, batch, y)
    jpi, actor_grads, _, _ = actor_loss(net, batch, cfg.alpha_ent)
    if not (np.isfinite(j1) and np.isfinite(j2) and np.isfinite(jpi)):
        raise TrainingDivergence(
            f"non-finite loss: J_Q1={j1!r} J_Q2={j2!r} J_pi={jpi!r}")
    joint = {name: critic_grads[name] + actor_grads[name]
             for name in critic_grads}
    opt.step(net.params, joint)
    polyak_update(net, cfg.polyak)


def train(gen: GeneratorConfig, cfg: TrainConfig,
          net: PolicyNet | None = None,
          engine: EngineConfig | None = None,
          checkpoint_path: str | None = None,
          curve_path: str | None = None) -> TrainResult:
    """Run episodes until the env-step budget is spent; returns the live net.

    Training scenario seeds live in their own stream (offset by 900_000) so
    they never collide with evaluation seeds.
    """
    net = net or init_net(cfg.net, seed=cfg.seed)
    engine = engine or EngineConfig(max_sweeps=30, max_idle=40,
                                    seed=cfg.seed + 1)
    opt = SGDMomentum(cfg.lr)
    replay = ReplayBuffer(cfg.replay_capacity)
    sample_rng = np.random.default_rng([cfg.seed, 0x5AC])
    batch_rng = np.random.default_rng([cfg.seed, 0xBA7C4])
    weights = gen.weights
    history: list[EpisodeRow] = []
    env_steps = 0
    grad_steps = 0
    episode = 0

    while env_steps < cfg.total_env_steps:
        scenario = generate_scenario(gen, 900_000 + cfg.seed * 10_000 + episode)
        sampler = OnlineSampler(net, sample_rng)
        ep_return = 0.0

        def on_decision(evt: DecisionEvent) -> None:
            nonlocal env_steps, grad_steps, ep_return
            sampler.note_outcome(evt, weights)
            if evt.target is None or evt.op.startswith("cert_"):
                return
            slot = sampler.pending.get(evt.agent_id)
            if slot is not None and slot[2] is not None:
                ep_return += slot[2]
            env_steps += 1
            if env_steps <= cfg.warmup_steps or len(replay) < cfg.batch_size:
                return
            for _ in range(cfg.grad_steps_per_env_step):
                _grad_step(net, opt, replay, cfg, batch_rng)
                grad_steps += 1

        timeline = simulate(scenario, sampler, config=engine,
                            on_decision=_feeding(sampler, replay, on_decision))
        sampler.flush_episode()
        for tr in sampler.completed:
            replay.push(tr)
        sampler.completed.clear()
        ents = sampler.entropies
        history.append(EpisodeRow(
            episode=episode, env_steps=env_steps, episode_return=ep_return,
            final_total=timeline.final_total,
            mean_entropy=float(np.mean(ents)) if ents else 0.0))
        episode += 1

    if curve_path is not None:
        write_learning_curve(history, curve_path)
    if checkpoint_path is not None:
        save_checkpoint(net, checkpoint_path)
    return TrainResult(net=net, history=history, env_steps=env_steps,
                       grad_steps=grad_steps)


def _feeding(sampler: OnlineSampler, replay: ReplayBuffer, inner):
    """Push transitions completed by the sampler into replay as they appear,
    then run the trainer hook (ordering keeps the buffer fresh mid-episode)."""
    def hook(evt: DecisionEvent) -> None:
        for tr in sampler.completed:
            replay.push(tr)
        sampler.completed.clear()
        inner(evt)
    return hook


def write_learning_curve(history: list[EpisodeRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "env_steps", "return", "final_total",
                    "entropy"])
        for row in history:
            w.writerow([row.episode, row.env_steps, repr(row.episode_return),
                        repr(row.final_total), repr(row.mean_entropy)])
