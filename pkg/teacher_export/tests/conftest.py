import os
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

sys.path.insert(0, str(Path(__file__).parent))

VOCAB_SIZE = 30  # 5 special tokens + 25 wordpieces
FIRST_PIECE = 5  # manifest token ids live in [FIRST_PIECE, VOCAB_SIZE)


def build_teacher_checkpoint(out_dir: Path, layers: int, hidden: int, heads: int,
                             seed: int = 0) -> Path:
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    torch.manual_seed(seed)
    cfg = BertConfig(
        vocab_size=VOCAB_SIZE,
        hidden_size=hidden,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=hidden * 4,
        max_position_embeddings=256,
    )
    model = BertModel(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    vocab_file = out_dir / "vocab.txt"
    pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + [
        f"w{i}" for i in range(FIRST_PIECE, VOCAB_SIZE)
    ]
    vocab_file.write_text("\n".join(pieces) + "\n")
    BertTokenizer(vocab_file=str(vocab_file)).save_pretrained(out_dir)
    return out_dir


def write_frames_file(path: Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"FRMS")
        f.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        f.write(frames.tobytes())


def write_corpus(out_dir: Path, token_lists: list[list[int]], input_dim: int = 8,
                 prefix: str = "utt", seed: int = 0) -> Path:
    """Manifest + FRMS frames with a prev/next chain, in the documented layout."""
    rng = np.random.default_rng(seed)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    ids = [f"{prefix}_{i:05d}" for i in range(len(token_lists))]
    lines = []
    for i, (utt_id, tokens) in enumerate(zip(ids, token_lists)):
        frames = rng.normal(size=(2 * len(tokens), input_dim))
        write_frames_file(frames_dir / f"{utt_id}.frm", frames)
        prev_id = ids[i - 1] if i > 0 else "-"
        next_id = ids[i + 1] if i + 1 < len(ids) else "-"
        lines.append("\t".join([
            utt_id, " ".join(str(t) for t in tokens),
            f"frames/{utt_id}.frm", prev_id, next_id,
        ]))
    manifest = out_dir / "train.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def chain_token_lists(n_utts: int, seed: int, long_enders: bool = True) -> list[list[int]]:
    """20ish utterances; the first and last are long so middles get full context."""
    rng = np.random.default_rng(seed)
    lists = []
    for i in range(n_utts):
        if long_enders and i in (0, n_utts - 1):
            n = 32
        else:
            n = int(rng.integers(4, 9))
        lists.append([int(t) for t in rng.integers(FIRST_PIECE, VOCAB_SIZE, size=n)])
    return lists


@pytest.fixture(scope="session")
def small_teacher(tmp_path_factory):
    from teacher_export.export import load_teacher

    d = build_teacher_checkpoint(
        tmp_path_factory.mktemp("small_bert"), layers=2, hidden=16, heads=2)
    return d, load_teacher(str(d))


@pytest.fixture(scope="session")
def base_teacher(tmp_path_factory):
    from teacher_export.export import load_teacher

    d = build_teacher_checkpoint(
        tmp_path_factory.mktemp("base_bert"), layers=12, hidden=768, heads=12)
    return d, load_teacher(str(d))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    write_corpus(out, chain_token_lists(20, seed=42))
    return out
