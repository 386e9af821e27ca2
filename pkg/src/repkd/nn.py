"""Minimal trainable network stack with hand-written reverse-mode gradients.

Three sub-networks feed the alignment lattice:

  * acoustic encoder: frame stacking with stride ``subsample`` (plus a
    small lookahead window) followed by affine+tanh blocks;
  * prediction network: token embeddings through a single gated
    recurrent cell, strictly causal;
  * joint network: multiplicative integration of one acoustic row and
    one prediction row into a log-distribution over vocab + blank,
    logits = W . tanh((A enc) * (B pred) + bias).

Every forward returns a cache consumed by the matching backward; all
gradients are exact and checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InvalidInput
from .seeding import rng_for


@dataclass
class ModelConfig:
    input_dim: int = 16
    d_trs: int = 64
    d_prd: int = 64
    d_joint: int = 64
    d_emb: int = 32
    vocab_size: int = 20
    subsample: int = 2
    lookahead: int = 1  # extra stacked blocks of `subsample` future frames
    enc_layers: int = 2
    dtype: type = np.float32

    @property
    def blank_index(self) -> int:
        return self.vocab_size

    @property
    def stacked_dim(self) -> int:
        return (1 + self.lookahead) * self.subsample * self.input_dim

    def digest_text(self) -> str:
        keys = (
            "input_dim d_trs d_prd d_joint d_emb vocab_size subsample "
            "lookahead enc_layers"
        ).split()
        return "\n".join(f"model.{k}={getattr(self, k)}" for k in keys)


@dataclass
class EncoderParams:
    layers: list[tuple[np.ndarray, np.ndarray]]  # [(W, b)], W is (out, in)
    subsample: int
    lookahead: int

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"enc.w{i}"] = w
            out[f"enc.b{i}"] = b
        return out


@dataclass
class PredictionParams:
    emb: np.ndarray  # (vocab, d_emb)
    start: np.ndarray  # (d_emb,) input consumed before the first token
    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray
    wr: np.ndarray
    ur: np.ndarray
    br: np.ndarray
    wn: np.ndarray
    un: np.ndarray
    bn: np.ndarray

    def named(self) -> dict[str, np.ndarray]:
        return {
            "pred.emb": self.emb,
            "pred.start": self.start,
            "pred.wz": self.wz,
            "pred.uz": self.uz,
            "pred.bz": self.bz,
            "pred.wr": self.wr,
            "pred.ur": self.ur,
            "pred.br": self.br,
            "pred.wn": self.wn,
            "pred.un": self.un,
            "pred.bn": self.bn,
        }


@dataclass
class JointParams:
    a: np.ndarray  # (d_joint, d_trs)
    b: np.ndarray  # (d_joint, d_prd)
    w: np.ndarray  # (vocab+1, d_joint)
    bias: np.ndarray  # (d_joint,)

    def named(self) -> dict[str, np.ndarray]:
        return {"joint.a": self.a, "joint.b": self.b, "joint.w": self.w, "joint.bias": self.bias}


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_encoder(cfg: ModelConfig, seed: int) -> EncoderParams:
    rng = rng_for(seed, "init.enc")
    dims = [cfg.stacked_dim] + [cfg.d_trs] * cfg.enc_layers
    layers = []
    for i in range(cfg.enc_layers):
        w = _uniform(rng, (dims[i + 1], dims[i]), dims[i], cfg.dtype)
        b = _uniform(rng, (dims[i + 1],), dims[i], cfg.dtype)
        layers.append((w, b))
    return EncoderParams(layers=layers, subsample=cfg.subsample, lookahead=cfg.lookahead)


def init_prediction(cfg: ModelConfig, seed: int) -> PredictionParams:
    rng = rng_for(seed, "init.pred")
    de, dh = cfg.d_emb, cfg.d_prd

    def gate():
        return (
            _uniform(rng, (dh, de), de, cfg.dtype),
            _uniform(rng, (dh, dh), dh, cfg.dtype),
            _uniform(rng, (dh,), dh, cfg.dtype),
        )

    wz, uz, bz = gate()
    wr, ur, br = gate()
    wn, un, bn = gate()
    return PredictionParams(
        emb=_uniform(rng, (cfg.vocab_size, de), de, cfg.dtype),
        start=_uniform(rng, (de,), de, cfg.dtype),
        wz=wz, uz=uz, bz=bz, wr=wr, ur=ur, br=br, wn=wn, un=un, bn=bn,
    )


def init_joint(cfg: ModelConfig, seed: int) -> JointParams:
    rng = rng_for(seed, "init.joint")
    return JointParams(
        a=_uniform(rng, (cfg.d_joint, cfg.d_trs), cfg.d_trs, cfg.dtype),
        b=_uniform(rng, (cfg.d_joint, cfg.d_prd), cfg.d_prd, cfg.dtype),
        w=_uniform(rng, (cfg.vocab_size + 1, cfg.d_joint), cfg.d_joint, cfg.dtype),
        bias=_uniform(rng, (cfg.d_joint,), cfg.d_joint, cfg.dtype),
    )


# ---------------------------------------------------------------------------
# acoustic encoder


def stack_frames(frames: np.ndarray, subsample: int, lookahead: int) -> np.ndarray:
    """Stack (1+lookahead)*subsample consecutive raw frames per output step.

    Output step t covers raw frames [t*s, t*s + (1+lookahead)*s), zero-padded
    at the tail, so the output length is ceil(T_raw / s).
    """
    t_raw, d = frames.shape
    s = subsample
    t_out = -(-t_raw // s)
    window = (1 + lookahead) * s
    padded = np.zeros((t_out * s + lookahead * s, d), dtype=frames.dtype)
    padded[:t_raw] = frames
    out = np.empty((t_out, window * d), dtype=frames.dtype)
    for t in range(t_out):
        out[t] = padded[t * s : t * s + window].reshape(-1)
    return out


def encode_acoustic(frames: np.ndarray, params: EncoderParams):
    """Run the encoder over raw frames.

    Args:
        frames: (T_raw, input_dim) matrix, T_raw >= subsample factor.
        params: encoder weights.

    Returns:
        (enc, cache): enc is (ceil(T_raw/s), d_trs); cache feeds encoder_backward.
    """
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise InvalidInput("encoder needs a non-empty (T_raw, input_dim) matrix")
    if frames.shape[0] < params.subsample:
        raise InvalidInput(
            f"need at least subsample={params.subsample} raw frames, got {frames.shape[0]}"
        )
    x = stack_frames(frames, params.subsample, params.lookahead)
    if x.shape[1] != params.layers[0][0].shape[1]:
        raise ContractViolation(
            f"stacked dim {x.shape[1]} does not match encoder input {params.layers[0][0].shape[1]}"
        )
    acts = [x]
    h = x
    for w, b in params.layers:
        h = np.tanh(h @ w.T + b)
        acts.append(h)
    return h, acts


def encoder_backward(d_enc: np.ndarray, cache, params: EncoderParams) -> dict[str, np.ndarray]:
    if cache is None:
        raise ContractViolation("encoder backward called without a forward cache")
    grads: dict[str, np.ndarray] = {}
    dh = d_enc
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        h = cache[i + 1]
        dpre = dh * (1.0 - h * h)
        grads[f"enc.w{i}"] = dpre.T @ cache[i]
        grads[f"enc.b{i}"] = dpre.sum(axis=0)
        dh = dpre @ w
    return grads


# ---------------------------------------------------------------------------
# prediction network (strictly causal gated recurrent cell)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_step(x: np.ndarray, h: np.ndarray, p: PredictionParams):
    """One recurrence step; returns (h_next, step_cache)."""
    z = _sigmoid(p.wz @ x + p.uz @ h + p.bz)
    r = _sigmoid(p.wr @ x + p.ur @ h + p.br)
    un_h = p.un @ h
    c = np.tanh(p.wn @ x + p.bn + r * un_h)
    h_next = (1.0 - z) * c + z * h
    return h_next, (x, h, z, r, un_h, c)


def prefix_states(tokens: Sequence[int], params: PredictionParams):
    """Hidden states after consuming 0..N prefix tokens.

    Row u is the state available when u tokens have been emitted, so it is
    conditioned on tokens[:u] only.  Returns (states (N+1, d_prd), cache).
    """
    vocab = params.emb.shape[0]
    for tok in tokens:
        if not 0 <= tok < vocab:
            raise InvalidInput(f"token id {tok} outside vocabulary of size {vocab}")
    n = len(tokens)
    dh = params.uz.shape[0]
    states = np.empty((n + 1, dh), dtype=params.emb.dtype)
    h = np.zeros(dh, dtype=params.emb.dtype)
    caches = []
    inputs = [params.start] + [params.emb[t] for t in tokens]
    for u, x in enumerate(inputs):
        h, c = gru_step(x, h, params)
        states[u] = h
        caches.append(c)
    return states, (tuple(tokens), caches)


def encode_prefix(tokens: Sequence[int], params: PredictionParams) -> np.ndarray:
    """Per-token text features: row i-1 is conditioned on tokens[:i-1]."""
    states, _ = prefix_states(tokens, params)
    return states[: len(tokens)]


def prediction_backward(d_states: np.ndarray, cache, params: PredictionParams) -> dict[str, np.ndarray]:
    """Backprop through time; d_states has one row per prefix state."""
    if cache is None:
        raise ContractViolation("prediction backward called without a forward cache")
    tokens, caches = cache
    g = {name: np.zeros_like(arr) for name, arr in params.named().items()}
    dh_next = np.zeros_like(d_states[0])
    for u in range(len(caches) - 1, -1, -1):
        x, h_prev, z, r, un_h, c = caches[u]
        dh = dh_next + d_states[u]
        dz = dh * (h_prev - c) * z * (1.0 - z)
        dc = dh * (1.0 - z)
        dpre_c = dc * (1.0 - c * c)
        dr = dpre_c * un_h
        d_unh = dpre_c * r
        dpre_r = dr * r * (1.0 - r)

        g["pred.wn"] += np.outer(dpre_c, x)
        g["pred.bn"] += dpre_c
        g["pred.un"] += np.outer(d_unh, h_prev)
        g["pred.wr"] += np.outer(dpre_r, x)
        g["pred.ur"] += np.outer(dpre_r, h_prev)
        g["pred.br"] += dpre_r
        g["pred.wz"] += np.outer(dz, x)
        g["pred.uz"] += np.outer(dz, h_prev)
        g["pred.bz"] += dz

        dh_next = (
            dh * z
            + params.un.T @ d_unh
            + params.ur.T @ dpre_r
            + params.uz.T @ dz
        )
        dx = params.wn.T @ dpre_c + params.wr.T @ dpre_r + params.wz.T @ dz
        if u == 0:
            g["pred.start"] += dx
        else:
            g["pred.emb"][tokens[u - 1]] += dx
    return g


# ---------------------------------------------------------------------------
# joint network


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def joint(enc_t: np.ndarray, pred_u: np.ndarray, params: JointParams) -> np.ndarray:
    """Log-distribution over vocab+blank for one lattice cell."""
    if enc_t.shape[0] != params.a.shape[1] or pred_u.shape[0] != params.b.shape[1]:
        raise ContractViolation(
            f"joint input dims {enc_t.shape[0]}/{pred_u.shape[0]} do not match "
            f"params {params.a.shape[1]}/{params.b.shape[1]}"
        )
    pre = (params.a @ enc_t) * (params.b @ pred_u) + params.bias
    return log_softmax(params.w @ np.tanh(pre))


def joint_grid(enc: np.ndarray, pred: np.ndarray, params: JointParams):
    """Joint log-distributions for the full (T, U) lattice.

    Returns (logp (T, U, vocab+1), cache).
    """
    if enc.shape[1] != params.a.shape[1] or pred.shape[1] != params.b.shape[1]:
        raise ContractViolation("joint grid input dims do not match params")
    ae = enc @ params.a.T
    bp = pred @ params.b.T
    pre = ae[:, None, :] * bp[None, :, :] + params.bias
    th = np.tanh(pre)
    logits = th @ params.w.T
    logp = log_softmax(logits)
    return logp, (enc, pred, ae, bp, th, logp)


def joint_grid_backward(d_logp: np.ndarray, cache, params: JointParams):
    """Backprop d loss/d logp through softmax and the joint.

    Returns (grads, d_enc, d_pred).
    """
    if cache is None:
        raise ContractViolation("joint backward called without a forward cache")
    enc, pred, ae, bp, th, logp = cache
    soft = np.exp(logp)
    d_logits = d_logp - soft * d_logp.sum(axis=-1, keepdims=True)
    grads = {
        "joint.w": np.einsum("tuv,tuj->vj", d_logits, th),
    }
    dth = np.einsum("tuv,vj->tuj", d_logits, params.w)
    dpre = dth * (1.0 - th * th)
    grads["joint.bias"] = dpre.sum(axis=(0, 1))
    dae = np.einsum("tuj,uj->tj", dpre, bp)
    dbp = np.einsum("tuj,tj->uj", dpre, ae)
    grads["joint.a"] = dae.T @ enc
    grads["joint.b"] = dbp.T @ pred
    d_enc = dae @ params.a
    d_pred = dbp @ params.b
    return grads, d_enc, d_pred
