"""Corpus management: manifests, synthetic speech, mock teachers, WER.

The synthetic corpus is the desk-scale stand-in for real audio: every
token owns a prototype vector and renders to a few noisy copies of it.
Mock teacher representations embed a token window that includes future
positions, so they carry information a causal student cannot see — the
same asymmetry a bidirectional text model provides at full scale.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .errors import (
    ConsistencyError,
    ContractViolation,
    FormatError,
    InvalidConfig,
    InvalidInput,
)
from .seeding import rng_for

ABSENT = "-"
CONTINUATION_PREFIX = "##"
MOCK_MASK_RATE = 0.10


@dataclass
class Utterance:
    id: str
    tokens: list[int]
    frames: np.ndarray  # (T_raw, input_dim) float32
    prev_id: str | None = None
    next_id: str | None = None


@dataclass
class TeacherRepSet:
    """All representations exported by one teacher.

    utts maps utterance id to a (variants, layers, N, hidden_dim) array;
    layer j lives at index j-1 (the embedding layer is never stored).
    """

    teacher_id: str
    layers: int
    hidden_dim: int
    variants: int
    utts: dict[str, np.ndarray] = field(default_factory=dict)

    def get(self, utt_id: str, variant: int, layer: int) -> np.ndarray:
        if utt_id not in self.utts:
            raise ConsistencyError(
                f"teacher {self.teacher_id!r} has no representations for {utt_id!r}"
            )
        if not 0 <= variant < self.variants or not 1 <= layer <= self.layers:
            raise ConsistencyError(
                f"teacher {self.teacher_id!r} has no matrix for "
                f"(utterance={utt_id!r}, variant={variant}, layer={layer})"
            )
        return self.utts[utt_id][variant, layer - 1]


@dataclass
class SynthSpec:
    vocab_size: int = 20
    utterances: int = 500
    min_tokens: int = 3
    max_tokens: int = 8
    min_frames_per_token: int = 2
    max_frames_per_token: int = 4
    input_dim: int = 16
    noise: float = 0.3
    seed: int = 12345
    id_prefix: str = "utt"
    prototypes: np.ndarray | None = None  # (vocab_size, input_dim), derived if None

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise InvalidConfig("vocabulary needs at least 2 tokens")
        if self.noise < 0:
            raise InvalidConfig("noise scale must be >= 0")
        if self.utterances < 1:
            raise InvalidConfig("need at least one utterance")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise InvalidConfig("bad token-length range")
        if not 1 <= self.min_frames_per_token <= self.max_frames_per_token:
            raise InvalidConfig("bad frames-per-token range")


def generate_synth_corpus(spec: SynthSpec) -> list[Utterance]:
    """Deterministic toy corpus; consecutive utterances are chained."""
    spec.validate()
    rng = rng_for(spec.seed, "synth", spec.id_prefix)
    protos = spec.prototypes
    if protos is None:
        # prototypes depend on the seed only, so splits generated with
        # different id prefixes share the same token acoustics
        protos = rng_for(spec.seed, "synth-protos").normal(
            size=(spec.vocab_size, spec.input_dim)
        )
    elif protos.shape != (spec.vocab_size, spec.input_dim):
        raise InvalidConfig("prototype matrix shape does not match spec dims")

    utts: list[Utterance] = []
    for i in range(spec.utterances):
        n = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        tokens = [int(t) for t in rng.integers(0, spec.vocab_size, size=n)]
        rows = []
        for tok in tokens:
            r = int(rng.integers(spec.min_frames_per_token, spec.max_frames_per_token + 1))
            block = protos[tok] + spec.noise * rng.normal(size=(r, spec.input_dim))
            rows.append(block)
        frames = np.concatenate(rows, axis=0).astype(np.float32)
        utts.append(Utterance(id=f"{spec.id_prefix}_{i:05d}", tokens=tokens, frames=frames))
    for i, u in enumerate(utts):
        u.prev_id = utts[i - 1].id if i > 0 else None
        u.next_id = utts[i + 1].id if i + 1 < len(utts) else None
    return utts


def synth_vocab(vocab_size: int) -> list[str]:
    # every 4th piece is a continuation so detokenization gets exercised
    return [
        f"{CONTINUATION_PREFIX}p{i}" if i % 4 == 3 else f"w{i}"
        for i in range(vocab_size)
    ]


# ---------------------------------------------------------------------------
# manifest + corpus directory layout


def write_manifest(path: str | Path, utts: list[Utterance], frames_dir: str = "frames") -> None:
    path = Path(path)
    lines = []
    for u in utts:
        lines.append(
            "\t".join(
                [
                    u.id,
                    " ".join(str(t) for t in u.tokens),
                    f"{frames_dir}/{u.id}.frm",
                    u.prev_id or ABSENT,
                    u.next_id or ABSENT,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_corpus_split(out_dir: str | Path, utts: list[Utterance], manifest_name: str) -> Path:
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for u in utts:
        formats.write_frames(frames_dir / f"{u.id}.frm", u.frames)
    manifest = out_dir / manifest_name
    write_manifest(manifest, utts)
    return manifest


def read_manifest(path: str | Path, load_frames: bool = True) -> list[Utterance]:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"manifest not found: {path}")
    utts = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
        utt_id, tok_field, frames_file, prev_id, next_id = parts
        tokens = [int(t) for t in tok_field.split()] if tok_field.strip() else []
        frames = (
            formats.read_frames(path.parent / frames_file)
            if load_frames
            else np.zeros((0, 0), dtype=np.float32)
        )
        utts.append(
            Utterance(
                id=utt_id,
                tokens=tokens,
                frames=frames,
                prev_id=None if prev_id == ABSENT else prev_id,
                next_id=None if next_id == ABSENT else next_id,
            )
        )
    return utts


def read_vocab(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def write_vocab(path: str | Path, vocab: list[str]) -> None:
    Path(path).write_text("\n".join(vocab) + "\n", encoding="utf-8")


def corpus_digest(corpus_dir: str | Path) -> str:
    """Stable content hash over manifests, vocab and frame files."""
    corpus_dir = Path(corpus_dir)
    h = hashlib.sha256()
    paths = sorted(
        p for p in corpus_dir.rglob("*")
        if p.is_file() and p.suffix in (".tsv", ".txt", ".frm")
    )
    for p in paths:
        h.update(str(p.relative_to(corpus_dir)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# mock teacher representations


def _window_signature(tokens: list[int], i: int, lookahead: int) -> list[tuple[int, int]]:
    sig = []
    for delta in range(-lookahead, lookahead + 1):
        j = i + delta
        if 0 <= j < len(tokens):
            sig.append((delta, tokens[j]))
    return sig


def generate_mock_reps(
    utts: list[Utterance],
    vocab_size: int,
    layers: int,
    hidden_dim: int,
    lookahead: int,
    seed: int,
    variants: int = 1,
    teacher_id: str = "mock",
) -> TeacherRepSet:
    """Deterministic window embeddings standing in for a bidirectional teacher.

    Token i's vector mixes per-offset embeddings of tokens i-w..i+w (future
    included), is passed through a per-layer scale/shift + tanh, and masked
    variants drop a seeded 10% of the non-center contributions.  Masking is
    keyed on the window content, so identical windows always produce
    identical vectors for a given (layer, variant).
    """
    if lookahead < 0:
        raise InvalidConfig("lookahead must be >= 0")
    if variants < 1:
        raise InvalidConfig("variant count must be >= 1")
    offsets = list(range(-lookahead, lookahead + 1))
    tables = {
        d: rng_for(seed, "mock-emb", d + lookahead).normal(size=(vocab_size, hidden_dim))
        / np.sqrt(hidden_dim)
        for d in offsets
    }
    layer_scale = {}
    layer_shift = {}
    for layer in range(1, layers + 1):
        lrng = rng_for(seed, "mock-layer", layer)
        layer_scale[layer] = lrng.uniform(0.5, 1.5, size=hidden_dim)
        layer_shift[layer] = lrng.normal(0.0, 0.3, size=hidden_dim)

    out = TeacherRepSet(
        teacher_id=teacher_id, layers=layers, hidden_dim=hidden_dim, variants=variants
    )
    for u in utts:
        n = len(u.tokens)
        reps = np.empty((variants, layers, n, hidden_dim), dtype=np.float32)
        for i in range(n):
            sig = _window_signature(u.tokens, i, lookahead)
            flat_sig: list[int] = []
            for delta, tok in sig:
                flat_sig.extend((delta + lookahead, tok))
            for v in range(variants):
                keep = {delta: True for delta, _ in sig}
                if v > 0:
                    mrng = rng_for(seed, "mock-mask", v, *flat_sig)
                    for delta, _ in sig:
                        if delta != 0:
                            keep[delta] = bool(mrng.uniform() >= MOCK_MASK_RATE)
                raw = np.zeros(hidden_dim)
                for delta, tok in sig:
                    if keep[delta]:
                        raw += tables[delta][tok] / (1.0 + abs(delta))
                for layer in range(1, layers + 1):
                    reps[v, layer - 1, i] = np.tanh(
                        raw * layer_scale[layer] + layer_shift[layer]
                    )
        out.utts[u.id] = reps
    return out


# ---------------------------------------------------------------------------
# teacher-representation interchange format (TREP)


def write_teacher_reps(path: str | Path, reps: TeacherRepSet) -> None:
    with open(path, "wb") as f:
        f.write(formats.TEACHER_MAGIC)
        f.write(struct.pack("<I", 1))
        formats.write_str(f, reps.teacher_id)
        f.write(struct.pack("<II", reps.layers, reps.hidden_dim))
        f.write(struct.pack("<I", reps.variants))
        f.write(struct.pack("<Q", len(reps.utts)))
        for utt_id, arr in reps.utts.items():
            formats.write_str(f, utt_id)
            n = arr.shape[2]
            f.write(struct.pack("<I", n))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_teacher_reps(
    path: str | Path, expected_tokens: dict[str, int] | None = None
) -> TeacherRepSet:
    """Read a TREP file, optionally enforcing per-utterance token counts."""
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"teacher representation file not found: {path}")
    with open(path, "rb") as f:
        formats.expect_magic(f, formats.TEACHER_MAGIC, path)
        formats.check_version(f, path)
        teacher_id = formats.read_str(f, "teacher id")
        layers = formats.read_u32(f, "layer count")
        hidden_dim = formats.read_u32(f, "hidden dim")
        variants = formats.read_u32(f, "variant count")
        count = formats.read_u64(f, "utterance count")
        if layers < 1 or hidden_dim < 1 or variants < 1:
            raise FormatError(f"{path}: degenerate header dims")
        out = TeacherRepSet(
            teacher_id=teacher_id, layers=layers, hidden_dim=hidden_dim, variants=variants
        )
        for _ in range(count):
            utt_id = formats.read_str(f, "utterance id")
            n = formats.read_u32(f, "token count")
            raw = formats.read_exact(
                f, 4 * variants * layers * n * hidden_dim, f"blocks for {utt_id}"
            )
            arr = np.frombuffer(raw, dtype="<f4").reshape(variants, layers, n, hidden_dim)
            if expected_tokens is not None:
                want = expected_tokens.get(utt_id)
                if want is not None and want != n:
                    raise ConsistencyError(
                        f"{path}: utterance {utt_id!r} has {n} token rows, "
                        f"manifest says {want}"
                    )
            out.utts[utt_id] = arr.copy()
    return out


# ---------------------------------------------------------------------------
# word error rate


def detokenize(token_ids: list[int], vocab: list[str] | None) -> list[str]:
    """Wordpiece merge: a continuation piece glues onto its predecessor."""
    words: list[str] = []
    for tok in token_ids:
        piece = vocab[tok] if vocab is not None and tok < len(vocab) else f"w{tok}"
        if piece.startswith(CONTINUATION_PREFIX) and words:
            words[-1] += piece[len(CONTINUATION_PREFIX):]
        else:
            words.append(piece.removeprefix(CONTINUATION_PREFIX))
    return words


def edit_distance(reference: list[str], hypothesis: list[str]) -> int:
    """Unit-cost Levenshtein distance with a two-row rolling table."""
    prev = list(range(len(hypothesis) + 1))
    for i, ref_word in enumerate(reference, 1):
        cur = [i] + [0] * len(hypothesis)
        for j, hyp_word in enumerate(hypothesis, 1):
            sub = prev[j - 1] + (ref_word != hyp_word)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]


def wer(reference: list[str], hypothesis: list[str]) -> float:
    if not reference:
        raise InvalidInput("reference word sequence is empty")
    return edit_distance(reference, hypothesis) / len(reference)
