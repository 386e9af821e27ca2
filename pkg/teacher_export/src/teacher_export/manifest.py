"""Reader for the line-oriented corpus manifest.

Format per line: `id <tab> token-ids <tab> frames-file <tab> prev-id <tab>
next-id`, with `-` marking absent neighbors.  The exporter never touches
the acoustic frames, only token ids and the neighbor chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

ABSENT = "-"


class ManifestError(Exception):
    pass


@dataclass
class ManifestEntry:
    id: str
    tokens: list[int]
    prev_id: str | None
    next_id: str | None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 5 tab-separated fields")
        utt_id, tok_field, _frames, prev_id, next_id = parts
        tokens = [int(t) for t in tok_field.split()] if tok_field.strip() else []
        entries.append(
            ManifestEntry(
                id=utt_id,
                tokens=tokens,
                prev_id=None if prev_id == ABSENT else prev_id,
                next_id=None if next_id == ABSENT else next_id,
            )
        )
    return entries
