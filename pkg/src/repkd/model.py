"""Student model bundle: parameters, combined loss, gradients, decoding.

Ties the encoder, prediction and joint networks to the alignment lattice
and (optionally) the teacher-regression head.  The alignment posterior
used by distillation is always a frozen input here — gradients never
flow through it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import distill, lattice, nn
from .distill import MultiRep, RegressionParams, kd_loss_backward
from .errors import ConsistencyError, ContractViolation
from .lattice import JointLogProbGrid


@dataclass
class StudentModel:
    cfg: nn.ModelConfig
    encoder: nn.EncoderParams
    prediction: nn.PredictionParams
    joint: nn.JointParams
    regression: RegressionParams | None = None

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.encoder.named())
        out.update(self.prediction.named())
        out.update(self.joint.named())
        if self.regression is not None:
            out.update(self.regression.named())
        return out

    def digest(self) -> str:
        return hashlib.sha256(self.cfg.digest_text().encode()).hexdigest()[:16]

    def params_digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.named_params().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def init_student(cfg: nn.ModelConfig, seed: int, reg_out_dim: int | None = None) -> StudentModel:
    model = StudentModel(
        cfg=cfg,
        encoder=nn.init_encoder(cfg, seed),
        prediction=nn.init_prediction(cfg, seed),
        joint=nn.init_joint(cfg, seed),
    )
    if reg_out_dim is not None:
        model.regression = distill.init_regression(
            cfg.d_trs + cfg.d_prd, reg_out_dim, seed, cfg.dtype
        )
    return model


def load_student(cfg: nn.ModelConfig, blobs: dict[str, np.ndarray]) -> StudentModel:
    """Rebuild a model from checkpoint blobs (cast to the configured dtype)."""
    def get(name):
        if name not in blobs:
            raise ConsistencyError(f"checkpoint is missing parameter {name!r}")
        return blobs[name].astype(cfg.dtype)

    layers = []
    i = 0
    while f"enc.w{i}" in blobs:
        layers.append((get(f"enc.w{i}"), get(f"enc.b{i}")))
        i += 1
    if not layers:
        raise ConsistencyError("checkpoint has no encoder layers")
    encoder = nn.EncoderParams(layers=layers, subsample=cfg.subsample, lookahead=cfg.lookahead)
    prediction = nn.PredictionParams(
        emb=get("pred.emb"), start=get("pred.start"),
        wz=get("pred.wz"), uz=get("pred.uz"), bz=get("pred.bz"),
        wr=get("pred.wr"), ur=get("pred.ur"), br=get("pred.br"),
        wn=get("pred.wn"), un=get("pred.un"), bn=get("pred.bn"),
    )
    joint = nn.JointParams(a=get("joint.a"), b=get("joint.b"),
                           w=get("joint.w"), bias=get("joint.bias"))
    regression = None
    if "reg.w" in blobs:
        regression = RegressionParams(w=get("reg.w"), b=get("reg.b"))
    return StudentModel(cfg=cfg, encoder=encoder, prediction=prediction,
                        joint=joint, regression=regression)


@dataclass
class KDTarget:
    """Frozen distillation inputs for one utterance."""

    target: MultiRep
    posterior: np.ndarray  # (N, T) frozen, rows sum to 1


@dataclass
class LossBreakdown:
    asr_nll: float
    kd: float
    combined: float


def _grid_for(model: StudentModel, utt_frames: np.ndarray, tokens: Sequence[int]):
    enc, enc_cache = nn.encode_acoustic(utt_frames, model.encoder)
    states, pred_cache = nn.prefix_states(tokens, model.prediction)
    logp, joint_cache = nn.joint_grid(enc, states, model.joint)
    grid = JointLogProbGrid(values=logp.astype(np.float64), blank_index=model.cfg.blank_index)
    return enc, enc_cache, states, pred_cache, logp, joint_cache, grid


def utterance_loss(
    model: StudentModel,
    frames: np.ndarray,
    tokens: Sequence[int],
    kd_target: KDTarget | None = None,
    kd_weight: float = 0.0,
    distance: str = "l1",
    normalize_kd: bool = False,
) -> LossBreakdown:
    """Forward-only combined loss (used by tests and finite differences)."""
    enc, _, states, _, _, _, grid = _grid_for(model, frames, tokens)
    asr = lattice.transducer_nll(grid, tokens)
    kd_value = 0.0
    if kd_target is not None and kd_weight > 0.0 and len(tokens) > 0:
        q = _check_posterior(kd_target.posterior, len(tokens), enc.shape[0])
        exp_enc = q @ enc
        kd_value = distill.kd_loss(
            exp_enc, states[: len(tokens)], kd_target.target,
            model.regression, distance, normalize_kd,
        )
    return LossBreakdown(asr_nll=asr, kd=kd_value,
                         combined=distill.combined_loss(asr, kd_value, kd_weight))


def _check_posterior(q: np.ndarray, n_tokens: int, n_frames: int) -> np.ndarray:
    if q.shape != (n_tokens, n_frames):
        raise ConsistencyError(
            f"frozen posterior shape {q.shape} does not match "
            f"(tokens={n_tokens}, frames={n_frames})"
        )
    return q.astype(np.float64, copy=False)


def utterance_loss_and_grads(
    model: StudentModel,
    frames: np.ndarray,
    tokens: Sequence[int],
    kd_target: KDTarget | None = None,
    kd_weight: float = 0.0,
    distance: str = "l1",
    normalize_kd: bool = False,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """One full forward/backward pass for a single utterance."""
    enc, enc_cache, states, pred_cache, logp, joint_cache, grid = _grid_for(
        model, frames, tokens
    )
    asr = lattice.transducer_nll(grid, tokens)
    d_logp = lattice.transducer_grad(grid, tokens)

    kd_value = 0.0
    kd_grads: dict[str, np.ndarray] = {}
    d_enc_kd = None
    d_states_kd = None
    if kd_target is not None and kd_weight > 0.0 and len(tokens) > 0:
        if model.regression is None:
            raise ContractViolation("distillation requested but model has no regression head")
        q = _check_posterior(kd_target.posterior, len(tokens), enc.shape[0])
        exp_enc = q @ enc
        kd_value, reg_grads, d_exp, d_psi = kd_loss_backward(
            exp_enc, states[: len(tokens)], kd_target.target,
            model.regression, distance, normalize_kd,
        )
        kd_grads = {name: kd_weight * g for name, g in reg_grads.items()}
        d_enc_kd = kd_weight * (q.T @ d_exp)
        d_states_kd = np.zeros_like(states, dtype=np.float64)
        d_states_kd[: len(tokens)] = kd_weight * d_psi

    joint_grads, d_enc, d_states = nn.joint_grid_backward(
        d_logp.astype(logp.dtype), joint_cache, model.joint
    )
    if d_enc_kd is not None:
        d_enc = d_enc + d_enc_kd
        d_states = d_states + d_states_kd
    grads: dict[str, np.ndarray] = {}
    grads.update(joint_grads)
    grads.update(nn.encoder_backward(d_enc.astype(enc.dtype), enc_cache, model.encoder))
    grads.update(nn.prediction_backward(d_states.astype(states.dtype), pred_cache, model.prediction))
    grads.update(kd_grads)
    dtype = model.cfg.dtype
    grads = {name: g.astype(dtype) for name, g in grads.items()}
    breakdown = LossBreakdown(asr_nll=asr, kd=kd_value,
                              combined=distill.combined_loss(asr, kd_value, kd_weight))
    return breakdown, grads


def compute_posteriors(model: StudentModel, frames: np.ndarray, tokens: Sequence[int]) -> np.ndarray:
    """Alignment posterior (N, T) of the current model for one utterance."""
    _, _, _, _, _, _, grid = _grid_for(model, frames, tokens)
    grids = lattice.alpha_beta(grid, tokens)
    return lattice.alignment_posterior(grids.alpha, grids.beta, grid, tokens).q


# ---------------------------------------------------------------------------
# greedy decoding


def greedy_decode_with(
    dist_fn: Callable[[int, tuple[int, ...]], np.ndarray],
    num_frames: int,
    blank_index: int,
    max_symbols_per_frame: int = 10,
) -> list[int]:
    """Frame-synchronous greedy search over an arbitrary step distribution.

    dist_fn(t, emitted_prefix) must return log-probabilities over
    vocab+blank for frame t (0-based) given the tokens emitted so far.
    The per-frame emission cap guarantees termination.
    """
    tokens: list[int] = []
    for t in range(num_frames):
        emitted = 0
        while True:
            logp = dist_fn(t, tuple(tokens))
            k = int(np.argmax(logp))
            if k == blank_index or emitted >= max_symbols_per_frame:
                break
            tokens.append(k)
            emitted += 1
    return tokens


def greedy_decode(model: StudentModel, frames: np.ndarray, max_symbols_per_frame: int = 10) -> list[int]:
    """Greedy transducer decoding with an incrementally updated prefix state."""
    enc, _ = nn.encode_acoustic(frames, model.encoder)
    p = model.prediction
    state, _ = nn.gru_step(p.start, np.zeros(model.cfg.d_prd, dtype=p.emb.dtype), p)
    consumed = 0

    def dist(t: int, prefix: tuple[int, ...]) -> np.ndarray:
        nonlocal state, consumed
        while consumed < len(prefix):
            state, _ = nn.gru_step(p.emb[prefix[consumed]], state, p)
            consumed += 1
        return nn.joint(enc[t], state, model.joint)

    return greedy_decode_with(dist, enc.shape[0], model.cfg.blank_index, max_symbols_per_frame)
