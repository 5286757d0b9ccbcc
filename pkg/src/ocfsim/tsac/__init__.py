"""Toy-scale attention policy network, SAC losses, replay, and checkpointing.

The trainer lives in ocfsim.tsac.train and is imported on demand; it pulls in
the simulation harness, which this package otherwise stays independent of.
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .net import (NetConfig, PolicyNet, attention, forward_batch, init_net,
                  policy_logits, polyak_update)
from .replay import ReplayBuffer, Transition, padded_batch

__all__ = [
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "NetConfig", "PolicyNet", "attention", "forward_batch", "init_net",
    "policy_logits", "polyak_update",
    "ReplayBuffer", "Transition", "padded_batch",
]
