"""Run a BERT-family teacher over context windows and export all layers.

The manifest must already be tokenized with the teacher's wordpiece
vocabulary: token ids are fed to the model directly, which keeps the
exported rows aligned one-to-one with the student's token positions.
Sequence delimiters ([CLS]/[SEP]) are added around the full window and
excluded from the exported span.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .manifest import ManifestEntry, read_manifest
from .trep import TrepWriter
from .windows import build_context_window, make_masked_variants


class ExportError(Exception):
    pass


@dataclass
class ExportJob:
    model_id: str
    manifest_path: str | Path
    out_path: str | Path
    context_budget: int = 60
    mask_rate: float = 0.10
    variants: int = 4
    seed: int = 0
    batch_size: int = 8
    teacher_id: str | None = None  # defaults to the model id

    def validate(self) -> None:
        if self.context_budget < 0:
            raise ExportError("context budget must be >= 0")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ExportError(f"mask rate {self.mask_rate} outside [0, 1]")
        if self.variants < 1:
            raise ExportError("variant count must be >= 1")


@dataclass
class LoadedTeacher:
    model: object
    layers: int
    hidden_dim: int
    vocab_size: int
    cls_id: int
    sep_id: int
    mask_id: int


def load_teacher(model_id: str) -> LoadedTeacher:
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModel.from_pretrained(model_id)
    model.eval()
    for tok_name in ("cls_token_id", "sep_token_id", "mask_token_id"):
        if getattr(tokenizer, tok_name, None) is None:
            raise ExportError(f"tokenizer for {model_id!r} has no {tok_name}")
    return LoadedTeacher(
        model=model,
        layers=model.config.num_hidden_layers,
        hidden_dim=model.config.hidden_size,
        vocab_size=model.config.vocab_size,
        cls_id=tokenizer.cls_token_id,
        sep_id=tokenizer.sep_token_id,
        mask_id=tokenizer.mask_token_id,
    )


def _hidden_states(teacher: LoadedTeacher, batch: list[list[int]]) -> torch.Tensor:
    """Stacked per-layer states: (layers, batch, max_len, hidden)."""
    max_len = max(len(seq) for seq in batch)
    input_ids = torch.zeros((len(batch), max_len), dtype=torch.long)
    attention = torch.zeros((len(batch), max_len), dtype=torch.long)
    for row, seq in enumerate(batch):
        input_ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        attention[row, : len(seq)] = 1
    with torch.no_grad():
        out = teacher.model(
            input_ids=input_ids, attention_mask=attention, output_hidden_states=True
        )
    # hidden_states[0] is the embedding layer; transformer layers start at 1
    return torch.stack(out.hidden_states[1:], dim=0)


def export_reps(job: ExportJob, teacher: LoadedTeacher | None = None) -> Path:
    """Export every (variant, layer) representation of every utterance."""
    job.validate()
    if teacher is None:
        teacher = load_teacher(job.model_id)
    entries = read_manifest(job.manifest_path)
    by_id = {e.id: e for e in entries}
    for e in entries:
        bad = [t for t in e.tokens if not 0 <= t < teacher.vocab_size]
        if bad:
            raise ExportError(
                f"utterance {e.id!r} has token ids {bad} outside the teacher "
                f"vocabulary (size {teacher.vocab_size}); retokenize the manifest "
                f"with the teacher's wordpiece vocabulary"
            )

    # one work item per (utterance, variant): delimiters added here
    items: list[tuple[str, int, list[int], int, int]] = []
    for e in entries:
        window = build_context_window(e, by_id, job.context_budget)
        variants = make_masked_variants(
            window, job.mask_rate, job.variants, job.seed, teacher.mask_id, e.id
        )
        for v, tokens in enumerate(variants):
            seq = [teacher.cls_id] + tokens + [teacher.sep_id]
            span_start = window.span_start + 1
            span_end = window.span_end + 1
            items.append((e.id, v, seq, span_start, span_end))

    results: dict[tuple[str, int], np.ndarray] = {}
    for start in range(0, len(items), job.batch_size):
        chunk = items[start : start + job.batch_size]
        states = _hidden_states(teacher, [seq for _, _, seq, _, _ in chunk])
        for row, (utt_id, v, _seq, s0, s1) in enumerate(chunk):
            span = states[:, row, s0:s1, :].to(torch.float32).numpy()
            n = s1 - s0
            want = len(by_id[utt_id].tokens)
            if n != want:
                raise ExportError(
                    f"utterance {utt_id!r}: exported span has {n} rows but the "
                    f"manifest lists {want} tokens"
                )
            results[(utt_id, v)] = span  # (layers, N, hidden)

    out_path = Path(job.out_path)
    teacher_id = job.teacher_id or str(job.model_id)
    with TrepWriter(
        out_path, teacher_id, teacher.layers, teacher.hidden_dim,
        job.variants, len(entries),
    ) as writer:
        for e in entries:
            blocks = np.stack([results[(e.id, v)] for v in range(job.variants)], axis=0)
            writer.add(e.id, blocks)
    return out_path
