"""Set-transformer policy/critic network in plain numpy, float64 throughout.

Per candidate i the encoded agent feature is concatenated with the encoded
candidate feature and projected to d_model, giving one token per candidate
(no positional encoding, so the whole stack is permutation-equivariant).
Two post-norm encoder blocks (multi-head self-attention scaled by the square
root of the model width, then a x2 feed-forward with tanh) produce H_enc;
three scalar heads read each token: actor logit and twin critic values.
Target copies of the critic heads are kept for bootstrapping.

All gradients are hand-derived. forward_batch caches every intermediate and
backward_batch consumes output gradients (dlogits, dq1, dq2); gradients at
padded positions are exactly zero because padded keys receive exactly zero
attention weight and padded per-position losses are masked upstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TARGET_PREFIXES = ("critic1.", "critic2.")


@dataclass(frozen=True)
class NetConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    hidden: int = 64
    agent_dim: int = 8
    cand_dim: int = 7

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("d_model", "n_heads", "n_layers", "hidden",
                     "agent_dim", "cand_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def ffn_hidden(self) -> int:
        return 2 * self.d_model

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; iteration order is the serialization order."""
    d, h = cfg.d_model, cfg.hidden
    shapes: dict[str, tuple[int, ...]] = {}

    def mlp(prefix: str, d_in: int, d_out: int):
        shapes[f"{prefix}.W1"] = (d_in, h)
        shapes[f"{prefix}.b1"] = (h,)
        shapes[f"{prefix}.W2"] = (h, d_out)
        shapes[f"{prefix}.b2"] = (d_out,)

    mlp("enc_agent", cfg.agent_dim, d)
    mlp("enc_task", cfg.cand_dim, d)
    mlp("enc_depot", cfg.cand_dim, d)
    shapes["fuse.W"] = (2 * d, d)
    shapes["fuse.b"] = (d,)
    for i in range(cfg.n_layers):
        for w in ("q", "k", "v", "o"):
            shapes[f"L{i}.attn.W{w}"] = (d, d)
            shapes[f"L{i}.attn.b{w}"] = (d,)
        shapes[f"L{i}.ln1.g"] = (d,)
        shapes[f"L{i}.ln1.b"] = (d,)
        shapes[f"L{i}.ffn.W1"] = (d, cfg.ffn_hidden)
        shapes[f"L{i}.ffn.b1"] = (cfg.ffn_hidden,)
        shapes[f"L{i}.ffn.W2"] = (cfg.ffn_hidden, d)
        shapes[f"L{i}.ffn.b2"] = (d,)
        shapes[f"L{i}.ln2.g"] = (d,)
        shapes[f"L{i}.ln2.b"] = (d,)
    mlp("actor", d, 1)
    mlp("critic1", d, 1)
    mlp("critic2", d, 1)
    return shapes


@dataclass
class PolicyNet:
    config: NetConfig
    params: dict[str, np.ndarray]
    target: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.config,
                         {k: v.copy() for k, v in self.params.items()},
                         {k: v.copy() for k, v in self.target.items()})


def init_net(cfg: NetConfig, seed: int = 0) -> PolicyNet:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng([int(seed), 0x7E7])
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("W"):
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif leaf == "g":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    target = {name: params[name].copy() for name in params
              if name.startswith(TARGET_PREFIXES)}
    return PolicyNet(config=cfg, params=params, target=target)


def zero_grads(cfg: NetConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}


# --- primitive layers ---------------------------------------------------------

def _linear_fwd(x, W, b):
    return x @ W + b


def _linear_bwd(dy, x, W):
    if x.ndim == 3:
        dW = np.tensordot(x, dy, axes=([0, 1], [0, 1]))
        db = dy.sum(axis=(0, 1))
    else:
        dW = x.T @ dy
        db = dy.sum(axis=0)
    return dy @ W.T, dW, db


def _mlp_fwd(x, p, prefix):
    pre = _linear_fwd(x, p[f"{prefix}.W1"], p[f"{prefix}.b1"])
    h = np.tanh(pre)
    y = _linear_fwd(h, p[f"{prefix}.W2"], p[f"{prefix}.b2"])
    return y, (x, h)


def _mlp_bwd(dy, cache, p, prefix, grads):
    x, h = cache
    dh, dW2, db2 = _linear_bwd(dy, h, p[f"{prefix}.W2"])
    dpre = dh * (1.0 - h * h)
    dx, dW1, db1 = _linear_bwd(dpre, x, p[f"{prefix}.W1"])
    grads[f"{prefix}.W1"] += dW1
    grads[f"{prefix}.b1"] += db1
    grads[f"{prefix}.W2"] += dW2
    grads[f"{prefix}.b2"] += db2
    return dx


_LN_EPS = 1e-5


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * istd
    return g * xhat + b, (xhat, istd)


def _ln_bwd(dy, cache, g, grads, g_name, b_name):
    xhat, istd = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    grads[g_name] += dg
    grads[b_name] += db
    dxhat = dy * g
    dx = istd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx


def _split_heads(x, n_heads):
    B, L, d = x.shape
    return x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, L, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dk)


def attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray,
              n_heads: int) -> np.ndarray:
    """Multi-head scaled dot-product attention on [L, d] matrices.

    Scores are scaled by the square root of the full model width (not the
    per-head width); heads are concatenated. The encoder applies its own
    output projection after this.
    """
    if K.shape[0] != V.shape[0]:
        raise ValueError("K and V must have equal row counts")
    d = Q.shape[-1]
    q = _split_heads(Q[None], n_heads)
    k = _split_heads(K[None], n_heads)
    v = _split_heads(V[None], n_heads)
    s = q @ k.swapaxes(-1, -2) / math.sqrt(d)
    s = s - s.max(axis=-1, keepdims=True)
    w = np.exp(s)
    w = w / w.sum(axis=-1, keepdims=True)
    return _merge_heads(w @ v)[0]


def _encoder_layer_fwd(X, pmask, p, i, cfg):
    pre = f"L{i}"
    scale = 1.0 / math.sqrt(cfg.d_model)
    Q = _linear_fwd(X, p[f"{pre}.attn.Wq"], p[f"{pre}.attn.bq"])
    K = _linear_fwd(X, p[f"{pre}.attn.Wk"], p[f"{pre}.attn.bk"])
    V = _linear_fwd(X, p[f"{pre}.attn.Wv"], p[f"{pre}.attn.bv"])
    q = _split_heads(Q, cfg.n_heads)
    k = _split_heads(K, cfg.n_heads)
    v = _split_heads(V, cfg.n_heads)
    S = q @ k.swapaxes(-1, -2) * scale
    key_ok = pmask[:, None, None, :] > 0
    S = np.where(key_ok, S, -np.inf)
    S = S - S.max(axis=-1, keepdims=True)
    W = np.exp(S)
    W = W / W.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(W @ v)
    O = _linear_fwd(ctx, p[f"{pre}.attn.Wo"], p[f"{pre}.attn.bo"])
    R1 = X + O
    N1, ln1_cache = _ln_fwd(R1, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
    F, ffn_cache = _mlp_fwd_ffn(N1, p, pre)
    R2 = N1 + F
    out, ln2_cache = _ln_fwd(R2, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
    cache = (X, q, k, v, W, ctx, ln1_cache, N1, ffn_cache, ln2_cache)
    return out, cache


def _mlp_fwd_ffn(x, p, pre):
    pre1 = _linear_fwd(x, p[f"{pre}.ffn.W1"], p[f"{pre}.ffn.b1"])
    h = np.tanh(pre1)
    y = _linear_fwd(h, p[f"{pre}.ffn.W2"], p[f"{pre}.ffn.b2"])
    return y, (x, h)


def _encoder_layer_bwd(dout, cache, p, i, cfg, grads):
    pre = f"L{i}"
    scale = 1.0 / math.sqrt(cfg.d_model)
    X, q, k, v, W, ctx, ln1_cache, N1, ffn_cache, ln2_cache = cache

    dR2 = _ln_bwd(dout, ln2_cache, p[f"{pre}.ln2.g"], grads,
                  f"{pre}.ln2.g", f"{pre}.ln2.b")
    dN1 = dR2.copy()
    x_ffn, h_ffn = ffn_cache
    dh, dW2, db2 = _linear_bwd(dR2, h_ffn, p[f"{pre}.ffn.W2"])
    dpre1 = dh * (1.0 - h_ffn * h_ffn)
    dx_ffn, dW1, db1 = _linear_bwd(dpre1, x_ffn, p[f"{pre}.ffn.W1"])
    grads[f"{pre}.ffn.W1"] += dW1
    grads[f"{pre}.ffn.b1"] += db1
    grads[f"{pre}.ffn.W2"] += dW2
    grads[f"{pre}.ffn.b2"] += db2
    dN1 += dx_ffn

    dR1 = _ln_bwd(dN1, ln1_cache, p[f"{pre}.ln1.g"], grads,
                  f"{pre}.ln1.g", f"{pre}.ln1.b")
    dX = dR1.copy()
    dctx, dWo, dbo = _linear_bwd(dR1, ctx, p[f"{pre}.attn.Wo"])
    grads[f"{pre}.attn.Wo"] += dWo
    grads[f"{pre}.attn.bo"] += dbo

    dctx_h = _split_heads(dctx, cfg.n_heads)
    dW_attn = dctx_h @ v.swapaxes(-1, -2)
    dv = W.swapaxes(-1, -2) @ dctx_h
    dS = W * (dW_attn - (dW_attn * W).sum(axis=-1, keepdims=True))
    dq = dS @ k * scale
    dk = dS.swapaxes(-1, -2) @ q * scale

    for dhead, name in ((dq, "q"), (dk, "k"), (dv, "v")):
        dmerged = _merge_heads(dhead)
        dx_lin, dWl, dbl = _linear_bwd(dmerged, X, p[f"{pre}.attn.W{name}"])
        grads[f"{pre}.attn.W{name}"] += dWl
        grads[f"{pre}.attn.b{name}"] += dbl
        dX += dx_lin
    return dX


# --- full forward / backward ---------------------------------------------------

@dataclass
class ForwardOut:
    logits: np.ndarray   # [B, L]
    q1: np.ndarray       # [B, L]
    q2: np.ndarray       # [B, L]
    q1_target: np.ndarray | None
    q2_target: np.ndarray | None
    cache: tuple


def forward_batch(net: PolicyNet, A: np.ndarray, C: np.ndarray,
                  kinds: np.ndarray, pmask: np.ndarray,
                  with_target: bool = False) -> ForwardOut:
    """A [B, agent_dim], C [B, L, cand_dim], kinds [B, L], pmask [B, L] of 0/1."""
    cfg = net.config
    p = net.params
    if A.shape[-1] != cfg.agent_dim or C.shape[-1] != cfg.cand_dim:
        raise ValueError(
            f"checkpoint expects feature dims ({cfg.agent_dim}, {cfg.cand_dim}), "
            f"got ({A.shape[-1]}, {C.shape[-1]})")
    B, L, _ = C.shape

    EA, cA = _mlp_fwd(A, p, "enc_agent")
    ET, cT = _mlp_fwd(C, p, "enc_task")
    ED, cD = _mlp_fwd(C, p, "enc_depot")
    sel = (kinds == 0).astype(float)[..., None]
    E = sel * ET + (1.0 - sel) * ED
    EA_b = np.broadcast_to(EA[:, None, :], (B, L, cfg.d_model))
    fused_in = np.concatenate([EA_b, E], axis=-1)
    X = _linear_fwd(fused_in, p["fuse.W"], p["fuse.b"])

    layer_caches = []
    for i in range(cfg.n_layers):
        X, cache = _encoder_layer_fwd(X, pmask, p, i, cfg)
        layer_caches.append(cache)

    logits_raw, c_actor = _mlp_fwd(X, p, "actor")
    q1_raw, c_q1 = _mlp_fwd(X, p, "critic1")
    q2_raw, c_q2 = _mlp_fwd(X, p, "critic2")
    q1t = q2t = None
    if with_target:
        q1t = _head_target(X, net.target, "critic1")
        q2t = _head_target(X, net.target, "critic2")
    cache = (cA, cT, cD, sel, fused_in, layer_caches, c_actor, c_q1, c_q2, X)
    return ForwardOut(logits=logits_raw[..., 0], q1=q1_raw[..., 0],
                      q2=q2_raw[..., 0], q1_target=q1t, q2_target=q2t,
                      cache=cache)


def _head_target(X, target, prefix):
    h = np.tanh(_linear_fwd(X, target[f"{prefix}.W1"], target[f"{prefix}.b1"]))
    return _linear_fwd(h, target[f"{prefix}.W2"], target[f"{prefix}.b2"])[..., 0]


def backward_batch(net: PolicyNet, out: ForwardOut, dlogits: np.ndarray,
                   dq1: np.ndarray, dq2: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar objective given its output sensitivities."""
    cfg = net.config
    p = net.params
    cA, cT, cD, sel, fused_in, layer_caches, c_actor, c_q1, c_q2, X = out.cache
    grads = zero_grads(cfg)

    dX = _mlp_bwd(dlogits[..., None], c_actor, p, "actor", grads)
    dX += _mlp_bwd(dq1[..., None], c_q1, p, "critic1", grads)
    dX += _mlp_bwd(dq2[..., None], c_q2, p, "critic2", grads)

    for i in range(cfg.n_layers - 1, -1, -1):
        dX = _encoder_layer_bwd(dX, layer_caches[i], p, i, cfg, grads)

    dfused, dWf, dbf = _linear_bwd(dX, fused_in, p["fuse.W"])
    grads["fuse.W"] += dWf
    grads["fuse.b"] += dbf
    d = cfg.d_model
    dEA = dfused[..., :d].sum(axis=1)
    dE = dfused[..., d:]
    _mlp_bwd(dEA, cA, p, "enc_agent", grads)
    _mlp_bwd(dE * sel, cT, p, "enc_task", grads)
    _mlp_bwd(dE * (1.0 - sel), cD, p, "enc_depot", grads)
    return grads


def policy_logits(net: PolicyNet, agent_vec: np.ndarray,
                  cand_feats: np.ndarray, cand_kinds: np.ndarray) -> np.ndarray:
    """Actor logits for a single state (no padding)."""
    out = forward_batch(net, agent_vec[None], cand_feats[None],
                        cand_kinds[None], np.ones((1, len(cand_kinds))))
    return out.logits[0]


def polyak_update(net: PolicyNet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * live, critic heads only."""
    for name in net.target:
        net.target[name] = (1.0 - tau) * net.target[name] + tau * net.params[name]
