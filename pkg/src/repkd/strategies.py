"""Layer-mapping strategies and per-epoch context-variant sampling.

A strategy decides which K of a teacher's L layers feed distillation in a
given epoch; the variant policy decides which masked context variant of
each utterance is used.  Both are pure functions of explicit seeds so
that runs are reproducible and resumable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidConfig
from .seeding import rng_for

STRATEGY_KINDS = ("last", "first", "uniform", "random", "meanpool")


@dataclass
class StrategySpec:
    kind: str  # one of STRATEGY_KINDS
    layers_k: int
    total_layers: int
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise InvalidConfig(
                f"unknown strategy {self.kind!r}; pick one of {STRATEGY_KINDS}"
            )
        if self.total_layers < 1:
            raise InvalidConfig("teacher must have at least one layer")
        if self.kind != "meanpool" and not 1 <= self.layers_k <= self.total_layers:
            raise InvalidConfig(
                f"layers_k={self.layers_k} outside [1, {self.total_layers}]"
            )


@dataclass
class ContextVariantPolicy:
    variants: int = 1
    mask_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.variants < 1:
            raise InvalidConfig("variant count must be >= 1")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise InvalidConfig(f"mask rate {self.mask_rate} outside [0, 1]")


def select_layers(spec: StrategySpec, epoch: int) -> list[int]:
    """Ascending 1-based layer indices for this epoch.

    last: the top K layers.  first: the bottom K.  uniform: every
    k = ceil(L/K) layers counted from the bottom (so K=1 picks the top
    layer), clipped to L and deduplicated.  random: K distinct layers
    drawn from a generator seeded by (seed, epoch).  meanpool selects all
    layers; the caller pools them.
    """
    spec.validate()
    L, K = spec.total_layers, spec.layers_k
    if spec.kind == "meanpool":
        return list(range(1, L + 1))
    if spec.kind == "last":
        return list(range(L - K + 1, L + 1))
    if spec.kind == "first":
        return list(range(1, K + 1))
    if spec.kind == "uniform":
        k = -(-L // K)
        picked = sorted({min(k * j, L) for j in range(1, K + 1)})
        return picked
    # random: reproducible per (seed, epoch), shared across utterances
    rng = rng_for(spec.seed, "layer-select", epoch)
    picked = rng.choice(L, size=K, replace=False) + 1
    return sorted(int(x) for x in picked)


def mean_pool_layers(all_layers: list[np.ndarray]) -> np.ndarray:
    """Elementwise average of every layer matrix (same shapes required)."""
    if not all_layers:
        raise ContractViolation("need at least one layer to pool")
    shape = all_layers[0].shape
    for m in all_layers[1:]:
        if m.shape != shape:
            raise ContractViolation(f"layer shape {m.shape} != {shape}")
    out = np.zeros(shape, dtype=np.float64)
    for m in all_layers:
        out += m
    return (out / len(all_layers)).astype(all_layers[0].dtype)


def sample_context_variant(policy: ContextVariantPolicy, utt_id: str, epoch: int) -> int:
    """Deterministic variant choice for (utterance, epoch).

    The unmasked variant 0 is canonical whenever masking is off.
    """
    policy.validate()
    if policy.variants == 1 or policy.mask_rate == 0.0:
        return 0
    rng = rng_for(policy.seed, "variant", utt_id, epoch)
    return int(rng.integers(policy.variants))
