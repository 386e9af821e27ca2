"""Structural validation of TREP files against a manifest."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifest import read_manifest
from .trep import TrepError, iter_utterances, read_header


@dataclass
class VerifyReport:
    header: dict | None = None
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.header is not None and not self.problems

    def lines(self) -> list[str]:
        out = []
        if self.header:
            h = self.header
            out.append(
                f"TREP v1 teacher={h['teacher_id']} L={h['layers']} "
                f"D={h['hidden_dim']} variants={h['variants']} utts={h['utterances']}"
            )
        for p in self.problems:
            out.append(f"FAIL {p}")
        if self.ok:
            out.append("all checks passed")
        return out


def verify_trep(path: str | Path, manifest_path: str | Path) -> VerifyReport:
    """Check magic/version, N-consistency, finiteness, and completeness."""
    report = VerifyReport()
    try:
        report.header = read_header(path)
    except (TrepError, OSError) as e:
        report.problems.append(str(e))
        return report

    expected = {e.id: len(e.tokens) for e in read_manifest(manifest_path)}
    seen = set()
    try:
        for utt_id, blocks in iter_utterances(path):
            seen.add(utt_id)
            want = expected.get(utt_id)
            if want is None:
                report.problems.append(f"{utt_id}: not in manifest")
                continue
            if blocks.shape[2] != want:
                report.problems.append(
                    f"{utt_id}: {blocks.shape[2]} token rows, manifest says {want}"
                )
            if not np.isfinite(blocks).all():
                for v in range(blocks.shape[0]):
                    for layer in range(blocks.shape[1]):
                        if not np.isfinite(blocks[v, layer]).all():
                            report.problems.append(
                                f"{utt_id}: non-finite values at "
                                f"(variant={v}, layer={layer + 1})"
                            )
    except TrepError as e:
        report.problems.append(str(e))
        return report

    missing = sorted(set(expected) - seen)
    for utt_id in missing:
        report.problems.append(f"{utt_id}: present in manifest but missing from file")
    return report
