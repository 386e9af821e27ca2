import numpy as np
import pytest

from teacher_export.manifest import ManifestEntry
from teacher_export.windows import build_context_window, make_masked_variants

MASK = 4


def chain(token_lists):
    entries = []
    for i, tokens in enumerate(token_lists):
        entries.append(ManifestEntry(
            id=f"u{i}",
            tokens=tokens,
            prev_id=f"u{i - 1}" if i > 0 else None,
            next_id=f"u{i + 1}" if i + 1 < len(token_lists) else None,
        ))
    return {e.id: e for e in entries}


class TestContextWindow:
    def test_zero_budget_is_target_only(self):
        by_id = chain([[5, 6], [7, 8, 9], [10]])
        w = build_context_window(by_id["u1"], by_id, budget=0)
        assert w.tokens == [7, 8, 9]
        assert (w.span_start, w.span_end) == (0, 3)

    def test_first_utterance_has_future_only(self):
        by_id = chain([[5, 6], [7, 8], [9, 10]])
        w = build_context_window(by_id["u0"], by_id, budget=60)
        assert w.tokens[: w.span_start] == []
        assert w.tokens[w.span_start : w.span_end] == [5, 6]
        assert w.tokens[w.span_end :] == [7, 8, 9, 10]

    def test_full_budget_splits_evenly(self):
        # long neighbors on both sides: exactly 30 past + 30 future
        lists = [[5] * 40, [6, 7, 8], [9] * 40]
        by_id = chain(lists)
        w = build_context_window(by_id["u1"], by_id, budget=60)
        assert w.span_start == 30
        assert w.span_len == 3
        assert len(w.tokens) == 30 + 3 + 30

    def test_past_taken_from_end_of_neighbor(self):
        lists = [[10, 11, 12, 13], [5], [14, 15, 16, 17]]
        by_id = chain(lists)
        w = build_context_window(by_id["u1"], by_id, budget=4)
        # 2 past from the end of u0, 2 future from the start of u2
        assert w.tokens == [12, 13, 5, 14, 15]

    def test_chain_walks_multiple_neighbors(self):
        lists = [[5, 6], [7, 8], [9], [10, 11], [12, 13]]
        by_id = chain(lists)
        w = build_context_window(by_id["u2"], by_id, budget=8)
        assert w.tokens == [5, 6, 7, 8, 9, 10, 11, 12, 13]
        assert (w.span_start, w.span_end) == (4, 5)


class TestMaskedVariants:
    def window(self, past=30, target=4, future=30):
        tokens = [9] * past + [7] * target + [8] * future
        from teacher_export.windows import ContextWindow

        return ContextWindow(tokens=tokens, span_start=past, span_end=past + target)

    def test_rate_zero_all_identical(self):
        w = self.window()
        variants = make_masked_variants(w, 0.0, 4, seed=1, mask_token_id=MASK, utt_id="u")
        assert all(v == variants[0] for v in variants)

    def test_exact_mask_count_at_full_context(self):
        w = self.window(past=30, future=30)
        variants = make_masked_variants(w, 0.10, 4, seed=2, mask_token_id=MASK, utt_id="u")
        for v in variants[1:]:
            assert sum(1 for t in v if t == MASK) == 6

    def test_target_never_masked(self):
        rng = np.random.default_rng(0)
        for trial in range(1000):
            past = int(rng.integers(0, 20))
            future = int(rng.integers(0, 20))
            target = int(rng.integers(1, 6))
            w = self.window(past=past, target=target, future=future)
            variants = make_masked_variants(
                w, 0.10, 3, seed=trial, mask_token_id=MASK, utt_id=f"u{trial}")
            for v in variants[1:]:
                assert v[w.span_start : w.span_end] == [7] * target

    def test_variant_zero_unmasked(self):
        w = self.window()
        variants = make_masked_variants(w, 0.5, 3, seed=3, mask_token_id=MASK, utt_id="u")
        assert variants[0] == list(w.tokens)
        assert MASK not in variants[0]

    def test_deterministic_per_seed(self):
        w = self.window()
        a = make_masked_variants(w, 0.10, 4, seed=7, mask_token_id=MASK, utt_id="x")
        b = make_masked_variants(w, 0.10, 4, seed=7, mask_token_id=MASK, utt_id="x")
        assert a == b
        c = make_masked_variants(w, 0.10, 4, seed=8, mask_token_id=MASK, utt_id="x")
        assert a != c

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            make_masked_variants(self.window(), 1.5, 2, 0, MASK, "u")
