"""Soft actor-critic objectives over padded batches, with analytic gradients.

Conventions fixed here once:
  - policy distribution = softmax(logits + action mask); masked/padded entries
    get probability exactly 0 and 0 * log 0 := 0 throughout;
  - bootstrap target y = r + gamma * (1 - done) * E_pi'[min_j Qbar_j - alpha log pi']
    is a constant w.r.t. parameters (target critic heads, no gradient);
  - critic loss = mean over the batch of (Q_j(s, a) - y)^2, per critic;
  - actor loss treats the critic values as constants (the gradient flows only
    through the policy) and reduces per-position terms under the padding mask:
    J_pi = sum_ij P_ij * l_ij / sum_ij P_ij.
"""

from __future__ import annotations

import numpy as np

from .net import PolicyNet, backward_batch, forward_batch, param_shapes
from .replay import Batch


def policy_distribution(logits: np.ndarray, amask: np.ndarray):
    """(pi, log_pi) rows; masked entries have pi = 0 and log_pi = 0 sentinel."""
    z = logits + amask
    top = z.max(axis=-1, keepdims=True)
    e = np.exp(z - top)
    total = e.sum(axis=-1, keepdims=True)
    pi = e / total
    log_pi = np.where(pi > 0.0, np.where(np.isfinite(z), z, 0.0) - top
                      - np.log(total), 0.0)
    return pi, log_pi


def entropy(pi: np.ndarray, log_pi: np.ndarray) -> np.ndarray:
    """Per-row policy entropy; padded/masked entries contribute exactly 0."""
    return -(pi * log_pi).sum(axis=-1)


def target_value(net: PolicyNet, batch: Batch, gamma: float,
                 alpha_ent: float) -> np.ndarray:
    """Per-transition bootstrap target, computed with target critic heads."""
    out = forward_batch(net, batch.next_A, batch.next_C, batch.next_kinds,
                        batch.next_pmask, with_target=True)
    pi, log_pi = policy_distribution(out.logits, batch.next_amask)
    qmin = np.minimum(out.q1_target, out.q2_target)
    soft = (pi * (qmin - alpha_ent * log_pi)).sum(axis=-1)
    return batch.rewards + gamma * (1.0 - batch.dones) * soft


def critic_loss(net: PolicyNet, batch: Batch, y: np.ndarray,
                want_grads: bool = True):
    """(J_Q1, J_Q2, grads of J_Q1 + J_Q2) with y held constant."""
    out = forward_batch(net, batch.A, batch.C, batch.kinds, batch.pmask)
    B = batch.size
    rows = np.arange(B)
    e1 = out.q1[rows, batch.actions] - y
    e2 = out.q2[rows, batch.actions] - y
    j1 = float(np.mean(e1 * e1))
    j2 = float(np.mean(e2 * e2))
    if not want_grads:
        return j1, j2, None
    dq1 = np.zeros_like(out.q1)
    dq2 = np.zeros_like(out.q2)
    dq1[rows, batch.actions] = 2.0 * e1 / B
    dq2[rows, batch.actions] = 2.0 * e2 / B
    grads = backward_batch(net, out, np.zeros_like(out.logits), dq1, dq2)
    return j1, j2, grads


def actor_loss(net: PolicyNet, batch: Batch, alpha_ent: float,
               q_fixed: np.ndarray | None = None, want_grads: bool = True):
    """(J_pi, grads, pi, log_pi); critic values enter as constants.

    When q_fixed is None the live twin-critic minimum from the same forward
    pass is used, detached. Passing q_fixed explicitly makes the loss a pure
    function of the actor path, which is what the finite-difference check
    perturbs.
    """
    out = forward_batch(net, batch.A, batch.C, batch.kinds, batch.pmask)
    if q_fixed is None:
        q_fixed = np.minimum(out.q1, out.q2)
    pi, log_pi = policy_distribution(out.logits, batch.amask)
    g = alpha_ent * log_pi - q_fixed
    terms = pi * g                              # exactly 0 at masked/padded
    denom = batch.pmask.sum()
    jpi = float((terms * batch.pmask).sum() / denom)
    if not want_grads:
        return jpi, None, pi, log_pi
    row_sum = terms.sum(axis=-1, keepdims=True)
    dlogits = pi * (g - row_sum) / denom
    grads = backward_batch(net, out, dlogits, np.zeros_like(out.q1),
                           np.zeros_like(out.q2))
    return jpi, grads, pi, log_pi


def grad_check(which: str, net: PolicyNet, batch: Batch, gamma: float = 0.99,
               alpha_ent: float = 0.2, h: float = 1e-5, n_samples: int = 200,
               seed: int = 0) -> float:
    """Max relative error of analytic vs central-difference gradients.

    The loss under test is frozen into a pure function of the live parameters
    (bootstrap target y fixed for the critic, critic values fixed for the
    actor) and n_samples randomly chosen scalar parameters are perturbed.
    The relative error uses an absolute floor of 1e-6 so float64 roundoff at
    near-zero gradients cannot dominate the report.
    """
    if which == "critic":
        y = target_value(net, batch, gamma, alpha_ent)
        j1, j2, analytic = critic_loss(net, batch, y)

        def value_fn(n: PolicyNet) -> float:
            a, b, _ = critic_loss(n, batch, y, want_grads=False)
            return a + b
    elif which == "actor":
        out = forward_batch(net, batch.A, batch.C, batch.kinds, batch.pmask)
        q_fixed = np.minimum(out.q1, out.q2)
        _, analytic, _, _ = actor_loss(net, batch, alpha_ent, q_fixed=q_fixed)

        def value_fn(n: PolicyNet) -> float:
            j, _, _, _ = actor_loss(n, batch, alpha_ent, q_fixed=q_fixed,
                                    want_grads=False)
            return j
    else:
        raise ValueError(f"unknown loss {which!r}")

    names = list(param_shapes(net.config))
    sizes = np.array([net.params[n].size for n in names])
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    rng = np.random.default_rng([int(seed), 0xFD])
    chosen = rng.choice(total, size=min(n_samples, total), replace=False)

    pert = net.copy()
    max_rel = 0.0
    for flat_idx in chosen:
        ti = int(np.searchsorted(bounds, flat_idx, side="right"))
        offset = int(flat_idx - (bounds[ti - 1] if ti > 0 else 0))
        flat = pert.params[names[ti]].reshape(-1)
        orig = flat[offset]
        flat[offset] = orig + h
        f_plus = value_fn(pert)
        flat[offset] = orig - h
        f_minus = value_fn(pert)
        flat[offset] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        an = float(analytic[names[ti]].reshape(-1)[offset])
        rel = abs(an - fd) / max(abs(an) + abs(fd), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel
