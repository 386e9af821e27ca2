import numpy as np
import pytest

from repkd import formats
from repkd.errors import FormatError


class TestFrames:
    def test_round_trip_byte_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = rng.normal(size=(7, 5)).astype(np.float32)
        p1, p2 = tmp_path / "a.frm", tmp_path / "b.frm"
        formats.write_frames(p1, frames)
        back = formats.read_frames(p1)
        np.testing.assert_array_equal(back, frames)
        formats.write_frames(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.frm"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            formats.read_frames(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.frm"
        formats.write_frames(p, np.ones((4, 3), dtype=np.float32))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            formats.read_frames(p)


class TestPosteriors:
    def entries(self):
        rng = np.random.default_rng(1)
        out = {}
        for i in range(3):
            q = rng.dirichlet(np.ones(4), size=2 + i).astype(np.float32)
            q /= q.sum(axis=1, keepdims=True)
            out[f"utt_{i:04d}"] = q
        return out

    def test_round_trip_byte_exact(self, tmp_path):
        entries = self.entries()
        p1, p2 = tmp_path / "a.alnq", tmp_path / "b.alnq"
        formats.write_posteriors(p1, entries)
        back = formats.read_posteriors(p1)
        assert list(back) == list(entries)
        for k in entries:
            np.testing.assert_array_equal(back[k], entries[k])
        formats.write_posteriors(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_row_sum_validation(self, tmp_path):
        p = tmp_path / "bad.alnq"
        formats.write_posteriors(p, {"u": np.full((2, 3), 0.5, dtype=np.float32)})
        with pytest.raises(FormatError, match="sum"):
            formats.read_posteriors(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "t.alnq"
        formats.write_posteriors(p, self.entries())
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncated"):
            formats.read_posteriors(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "v.alnq"
        formats.write_posteriors(p, self.entries())
        raw = bytearray(p.read_bytes())
        raw[4] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            formats.read_posteriors(p)


class TestCheckpoint:
    def blobs(self):
        rng = np.random.default_rng(2)
        return {
            "enc.w0": rng.normal(size=(4, 6)).astype(np.float32),
            "enc.b0": rng.normal(size=(4,)).astype(np.float32),
            "meta.epoch": np.array(7.0, dtype=np.float32),
        }

    def test_round_trip_byte_exact(self, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        blobs = self.blobs()
        formats.write_checkpoint(p1, "digest123", blobs)
        digest, back = formats.read_checkpoint(p1)
        assert digest == "digest123"
        assert list(back) == list(blobs)
        for k in blobs:
            np.testing.assert_array_equal(back[k], blobs[k])
            assert back[k].shape == blobs[k].shape
        formats.write_checkpoint(p2, digest, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_trailing_garbage_detected(self, tmp_path):
        p = tmp_path / "g.ckpt"
        formats.write_checkpoint(p, "d", self.blobs())
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            formats.read_checkpoint(p)

    def test_bad_magic_names_bytes(self, tmp_path):
        p = tmp_path / "m.ckpt"
        p.write_bytes(b"ABCD" + b"\x00" * 32)
        with pytest.raises(FormatError, match="ABCD"):
            formats.read_checkpoint(p)
