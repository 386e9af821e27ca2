"""Writer/reader for the TREP teacher-representation interchange format.

Layout (little-endian): magic "TREP", version u32 = 1, teacher id
(u16 length + UTF-8), layer count u32, hidden dim u32, variant count u32,
utterance count u64; then per utterance: id (u16 + UTF-8), N u32, and the
variant-major, layer-major sequence of N x hidden_dim f32 row-major
blocks, all layers 1..L present for every variant.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

MAGIC = b"TREP"


class TrepError(Exception):
    pass


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TrepError(f"truncated file while reading {what} ({len(buf)}/{n} bytes)")
    return buf


def _write_str(f: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_str(f: BinaryIO, what: str) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2, what + " length"))
    return _read_exact(f, n, what).decode("utf-8")


class TrepWriter:
    """Streams one utterance at a time so exports never hold the whole file."""

    def __init__(self, path: str | Path, teacher_id: str, layers: int,
                 hidden_dim: int, variants: int, utterances: int):
        self.layers = layers
        self.hidden_dim = hidden_dim
        self.variants = variants
        self._declared = utterances
        self._written = 0
        self._f = open(path, "wb")
        self._f.write(MAGIC)
        self._f.write(struct.pack("<I", 1))
        _write_str(self._f, teacher_id)
        self._f.write(struct.pack("<II", layers, hidden_dim))
        self._f.write(struct.pack("<I", variants))
        self._f.write(struct.pack("<Q", utterances))

    def add(self, utt_id: str, blocks: np.ndarray) -> None:
        """blocks: (variants, layers, N, hidden_dim) float array."""
        expected = (self.variants, self.layers)
        if blocks.ndim != 4 or blocks.shape[:2] != expected or blocks.shape[3] != self.hidden_dim:
            raise TrepError(
                f"{utt_id}: block shape {blocks.shape} does not match header "
                f"(variants={self.variants}, layers={self.layers}, D={self.hidden_dim})"
            )
        _write_str(self._f, utt_id)
        self._f.write(struct.pack("<I", blocks.shape[2]))
        self._f.write(np.ascontiguousarray(blocks, dtype="<f4").tobytes())
        self._written += 1

    def close(self) -> None:
        try:
            if self._written != self._declared:
                raise TrepError(
                    f"wrote {self._written} utterances but header declared {self._declared}"
                )
        finally:
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.close()
        else:
            self._f.close()


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise TrepError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != 1:
            raise TrepError(f"{path}: unsupported version {version}")
        teacher_id = _read_str(f, "teacher id")
        layers, hidden = struct.unpack("<II", _read_exact(f, 8, "dims"))
        (variants,) = struct.unpack("<I", _read_exact(f, 4, "variant count"))
        (count,) = struct.unpack("<Q", _read_exact(f, 8, "utterance count"))
        return {
            "teacher_id": teacher_id,
            "layers": layers,
            "hidden_dim": hidden,
            "variants": variants,
            "utterances": count,
        }


def iter_utterances(path: str | Path) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (utt_id, (variants, layers, N, D) array) in file order."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise TrepError(f"{path}: bad magic {magic!r}")
        _read_exact(f, 4, "version")
        _read_str(f, "teacher id")
        layers, hidden = struct.unpack("<II", _read_exact(f, 8, "dims"))
        (variants,) = struct.unpack("<I", _read_exact(f, 4, "variant count"))
        (count,) = struct.unpack("<Q", _read_exact(f, 8, "utterance count"))
        for _ in range(count):
            utt_id = _read_str(f, "utterance id")
            (n,) = struct.unpack("<I", _read_exact(f, 4, "token count"))
            raw = _read_exact(f, 4 * variants * layers * n * hidden, f"blocks for {utt_id}")
            yield utt_id, np.frombuffer(raw, dtype="<f4").reshape(
                variants, layers, n, hidden
            ).copy()
        if f.read(1):
            raise TrepError(f"{path}: trailing bytes after last utterance")
