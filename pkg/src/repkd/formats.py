"""Binary artifact formats: acoustic frames, frozen posteriors, checkpoints.

Everything is little-endian; floats are stored as f32 row-major.  Readers
raise FormatError on any structural problem (bad magic, bad version,
truncation, invalid payload) instead of crashing.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

FRAMES_MAGIC = b"FRMS"
POSTERIOR_MAGIC = b"ALNQ"
CHECKPOINT_MAGIC = b"TKDM"
TEACHER_MAGIC = b"TREP"


def read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what} ({len(buf)}/{n} bytes)")
    return buf


def expect_magic(f: BinaryIO, magic: bytes, path: Path | str) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


def read_u16(f: BinaryIO, what: str = "u16") -> int:
    return struct.unpack("<H", read_exact(f, 2, what))[0]


def read_u32(f: BinaryIO, what: str = "u32") -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def read_u64(f: BinaryIO, what: str = "u64") -> int:
    return struct.unpack("<Q", read_exact(f, 8, what))[0]


def read_str(f: BinaryIO, what: str = "string") -> str:
    n = read_u16(f, what + " length")
    return read_exact(f, n, what).decode("utf-8")


def write_str(f: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"string too long to serialize ({len(raw)} bytes)")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def read_f32_matrix(f: BinaryIO, rows: int, cols: int, what: str) -> np.ndarray:
    raw = read_exact(f, 4 * rows * cols, what)
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).copy()


def check_version(f: BinaryIO, path, expected: int = 1) -> None:
    version = read_u32(f, "version")
    if version != expected:
        raise FormatError(f"{path}: unsupported version {version}, expected {expected}")


# ---------------------------------------------------------------------------
# FRMS: raw acoustic frames for one utterance


def write_frames(path: str | Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    with open(path, "wb") as f:
        f.write(FRAMES_MAGIC)
        f.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        f.write(frames.tobytes())


def read_frames(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        expect_magic(f, FRAMES_MAGIC, path)
        t_raw = read_u32(f, "frame count")
        d_in = read_u32(f, "frame dim")
        return read_f32_matrix(f, t_raw, d_in, "frame payload")


# ---------------------------------------------------------------------------
# ALNQ: frozen alignment posteriors, one (N, T) row-stochastic matrix per utt


def write_posteriors(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(POSTERIOR_MAGIC)
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<Q", len(entries)))
        for utt_id, q in entries.items():
            write_str(f, utt_id)
            f.write(struct.pack("<II", q.shape[0], q.shape[1]))
            f.write(np.ascontiguousarray(q, dtype="<f4").tobytes())


def read_posteriors(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        expect_magic(f, POSTERIOR_MAGIC, path)
        check_version(f, path)
        count = read_u64(f, "utterance count")
        for _ in range(count):
            utt_id = read_str(f, "utterance id")
            n = read_u32(f, "token count")
            t = read_u32(f, "frame count")
            q = read_f32_matrix(f, n, t, f"posterior for {utt_id}")
            sums = q.sum(axis=1)
            if n and np.abs(sums - 1.0).max() > 1e-4:
                raise FormatError(
                    f"{path}: posterior rows for {utt_id} sum to "
                    f"{sums.min():.6f}..{sums.max():.6f}, expected 1"
                )
            out[utt_id] = q
    return out


# ---------------------------------------------------------------------------
# TKDM: model checkpoints (config digest + named f32 blobs)


def write_checkpoint(path: str | Path, digest: str, blobs: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", 1))
        write_str(f, digest)
        f.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs.items():
            write_str(f, name)
            arr = np.asarray(arr, dtype="<f4")
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes(order="C"))


def read_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    blobs: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        expect_magic(f, CHECKPOINT_MAGIC, path)
        check_version(f, path)
        digest = read_str(f, "config digest")
        count = read_u32(f, "blob count")
        for _ in range(count):
            name = read_str(f, "parameter name")
            rank = struct.unpack("<B", read_exact(f, 1, "rank"))[0]
            shape = tuple(read_u32(f, "dim") for _ in range(rank))
            size = int(np.prod(shape)) if shape else 1
            raw = read_exact(f, 4 * size, f"payload of {name}")
            blobs[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after last parameter blob")
    return digest, blobs
