"""Regression of student features onto concatenated teacher representations.

The trained objective moves the frame expectation inside the regression
network: for each token i the student predicts the teacher vector from
(expected acoustic feature under the alignment posterior, text feature).
The exact form with the expectation outside the distance is kept as a
test oracle; for a linear regressor and convex distance the trained form
lower-bounds it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidConfig
from .seeding import rng_for

DISTANCES = ("l1", "l2sq")


@dataclass
class RegressionParams:
    """Single affine map from student features to the concatenated teacher dim."""

    w: np.ndarray  # (d_out, d_trs + d_prd)
    b: np.ndarray  # (d_out,)

    def named(self) -> dict[str, np.ndarray]:
        return {"reg.w": self.w, "reg.b": self.b}


def init_regression(d_in: int, d_out: int, seed: int, dtype=np.float32) -> RegressionParams:
    rng = rng_for(seed, "init.reg")
    bound = 1.0 / np.sqrt(d_in)
    return RegressionParams(
        w=rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype),
        b=rng.uniform(-bound, bound, size=(d_out,)).astype(dtype),
    )


@dataclass(frozen=True)
class RepComponent:
    """Where one slice of a concatenated teacher vector came from."""

    model_id: str
    variant_id: int
    layer_index: int
    dim: int
    offset: int = 0

    def sort_key(self):
        return (self.model_id, self.variant_id, self.layer_index)


@dataclass
class MultiRep:
    """Per-token concatenated teacher vectors plus component descriptors."""

    matrix: np.ndarray  # (N, total_dim)
    components: list[RepComponent]

    @property
    def total_dim(self) -> int:
        return self.matrix.shape[1]


def concat_representations(components: list[tuple[RepComponent, np.ndarray]]) -> MultiRep:
    """Concatenate teacher matrices in canonical (model, variant, layer) order.

    Input order is irrelevant: the output is byte-identical for any
    permutation of the same components.
    """
    if not components:
        raise ContractViolation("need at least one representation component")
    n = components[0][1].shape[0]
    for desc, mat in components:
        if mat.ndim != 2 or mat.shape[0] != n:
            raise ContractViolation(
                f"component {desc.model_id}/v{desc.variant_id}/L{desc.layer_index} "
                f"has {mat.shape[0]} rows, expected {n}"
            )
        if mat.shape[1] != desc.dim:
            raise ContractViolation(
                f"component {desc.model_id}/v{desc.variant_id}/L{desc.layer_index} "
                f"dim {mat.shape[1]} does not match descriptor dim {desc.dim}"
            )
    ordered = sorted(components, key=lambda it: it[0].sort_key())
    offset = 0
    descs = []
    mats = []
    for desc, mat in ordered:
        descs.append(RepComponent(desc.model_id, desc.variant_id, desc.layer_index,
                                  desc.dim, offset))
        mats.append(mat)
        offset += desc.dim
    return MultiRep(matrix=np.concatenate(mats, axis=1), components=descs)


def expected_phi(posterior_row: np.ndarray, enc: np.ndarray) -> np.ndarray:
    """Expected acoustic feature for one token: sum_t q(t) * enc[t]."""
    if posterior_row.shape[0] != enc.shape[0]:
        raise ContractViolation(
            f"posterior length {posterior_row.shape[0]} != frame count {enc.shape[0]}"
        )
    s = float(posterior_row.sum())
    if abs(s - 1.0) > 1e-4:
        raise ContractViolation(f"posterior row sums to {s}, expected 1")
    return posterior_row @ enc


def _distance(kind: str, diff: np.ndarray) -> float:
    if kind == "l1":
        return float(np.abs(diff).sum())
    if kind == "l2sq":
        return float((diff * diff).sum())
    raise InvalidConfig(f"unknown distance kind {kind!r}; pick one of {DISTANCES}")


def _distance_grad(kind: str, diff: np.ndarray) -> np.ndarray:
    if kind == "l1":
        return np.sign(diff)  # subgradient 0 at exact zeros
    if kind == "l2sq":
        return 2.0 * diff
    raise InvalidConfig(f"unknown distance kind {kind!r}; pick one of {DISTANCES}")


def regression_inputs(exp_enc: np.ndarray, pred: np.ndarray) -> np.ndarray:
    if exp_enc.shape[0] != pred.shape[0]:
        raise ContractViolation("expected-acoustic and text feature row counts differ")
    return np.concatenate([exp_enc, pred], axis=1)


def kd_loss(
    exp_enc: np.ndarray,
    pred: np.ndarray,
    target: MultiRep,
    reg: RegressionParams,
    distance: str = "l1",
    normalize: bool = False,
) -> float:
    """Sum over tokens of d(regressed student feature, teacher vector).

    exp_enc: (N, d_trs) expected acoustic features, pred: (N, d_prd) text
    features, target: concatenated teacher vectors (N, d_out).
    """
    rin = regression_inputs(exp_enc, pred)
    out = rin @ reg.w.T + reg.b
    if out.shape[1] != target.total_dim:
        raise ContractViolation(
            f"regression output dim {out.shape[1]} != target dim {target.total_dim}"
        )
    total = _distance(distance, out - target.matrix)
    if normalize and rin.shape[0] > 0:
        total /= rin.shape[0]
    return total


def kd_loss_backward(
    exp_enc: np.ndarray,
    pred: np.ndarray,
    target: MultiRep,
    reg: RegressionParams,
    distance: str = "l1",
    normalize: bool = False,
):
    """Gradients of kd_loss wrt regression params and both inputs.

    Returns (loss, grads dict, d_exp_enc, d_pred).
    """
    rin = regression_inputs(exp_enc, pred)
    out = rin @ reg.w.T + reg.b
    if out.shape[1] != target.total_dim:
        raise ContractViolation(
            f"regression output dim {out.shape[1]} != target dim {target.total_dim}"
        )
    diff = out - target.matrix
    loss = _distance(distance, diff)
    dout = _distance_grad(distance, diff)
    if normalize and rin.shape[0] > 0:
        loss /= rin.shape[0]
        dout = dout / rin.shape[0]
    grads = {"reg.w": dout.T @ rin, "reg.b": dout.sum(axis=0)}
    drin = dout @ reg.w
    d_trs = exp_enc.shape[1]
    return loss, grads, drin[:, :d_trs], drin[:, d_trs:]


def kd_loss_exact(
    posterior: np.ndarray,
    enc: np.ndarray,
    pred: np.ndarray,
    target: MultiRep,
    reg: RegressionParams,
    distance: str = "l1",
) -> float:
    """Expectation outside the distance (test oracle, not trained).

    sum_i sum_t q[i, t] * d(R(enc[t], pred[i]), target[i]).
    """
    n, t_frames = posterior.shape
    if enc.shape[0] != t_frames or pred.shape[0] != n:
        raise ContractViolation("posterior/enc/pred shapes are inconsistent")
    total = 0.0
    for i in range(n):
        for t in range(t_frames):
            rin = np.concatenate([enc[t], pred[i]])
            out = reg.w @ rin + reg.b
            total += float(posterior[i, t]) * _distance(distance, out - target.matrix[i])
    return total


def combined_loss(asr_nll: float, kd: float, kd_weight: float) -> float:
    """Total training objective: ASR loss plus weighted distillation loss."""
    if kd_weight < 0:
        raise InvalidConfig(f"kd weight must be >= 0, got {kd_weight}")
    return asr_nll + kd_weight * kd
