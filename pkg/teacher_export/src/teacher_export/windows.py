"""Context-window construction and on-the-fly context masking.

The teacher sees each utterance embedded in its conversation: up to half
the context budget of past tokens (taken from the tails of preceding
utterances) and up to half of future tokens (heads of following ones).
Masked variants replace a seeded fraction of CONTEXT positions with the
mask token; target-span positions are never touched, so the exported
representations always describe the original utterance tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifest import ManifestEntry


@dataclass
class ContextWindow:
    tokens: list[int]
    span_start: int  # first target position
    span_end: int  # one past the last target position

    @property
    def span_len(self) -> int:
        return self.span_end - self.span_start

    def context_positions(self) -> list[int]:
        return [i for i in range(len(self.tokens)) if not self.span_start <= i < self.span_end]


def build_context_window(
    entry: ManifestEntry,
    by_id: dict[str, ManifestEntry],
    budget: int,
) -> ContextWindow:
    """Gather up to budget//2 past and budget//2 future context tokens.

    Degrades gracefully: when a neighbor chain runs out, the window is
    simply shorter on that side.
    """
    past_budget = budget // 2
    future_budget = budget // 2

    past: list[int] = []
    cur = entry.prev_id
    while cur is not None and len(past) < past_budget:
        neighbor = by_id.get(cur)
        if neighbor is None:
            break
        take = min(past_budget - len(past), len(neighbor.tokens))
        # take from the end: the tokens closest to the target utterance
        past = neighbor.tokens[len(neighbor.tokens) - take :] + past
        cur = neighbor.prev_id

    future: list[int] = []
    cur = entry.next_id
    while cur is not None and len(future) < future_budget:
        neighbor = by_id.get(cur)
        if neighbor is None:
            break
        take = min(future_budget - len(future), len(neighbor.tokens))
        future = future + neighbor.tokens[:take]
        cur = neighbor.next_id

    tokens = past + entry.tokens + future
    return ContextWindow(
        tokens=tokens,
        span_start=len(past),
        span_end=len(past) + len(entry.tokens),
    )


def make_masked_variants(
    window: ContextWindow,
    rate: float,
    variants: int,
    seed: int,
    mask_token_id: int,
    utt_id: str,
) -> list[list[int]]:
    """Variant 0 is the unmasked window; the rest mask context positions.

    Each masked variant replaces floor(rate * context_len) distinct
    context positions, drawn deterministically from (seed, utt, variant).
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate {rate} outside [0, 1]")
    if variants < 1:
        raise ValueError("need at least one variant")
    out = [list(window.tokens)]
    context = window.context_positions()
    n_mask = int(rate * len(context))
    for v in range(1, variants):
        tokens = list(window.tokens)
        if n_mask:
            rng = np.random.default_rng([seed & 0xFFFFFFFF, _fold(utt_id), v])
            picked = rng.choice(len(context), size=n_mask, replace=False)
            for idx in picked:
                tokens[context[int(idx)]] = mask_token_id
        out.append(tokens)
    return out


def _fold(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode("utf-8"))
