import os
from pathlib import Path

import numpy as np
import pytest

from repkd.cli import main


def run(argv):
    return main(argv)


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


SMALL_SYNTH = [
    "--synth.train_utts", "16", "--synth.dev_utts", "6",
    "--synth.vocab_size", "8", "--synth.input_dim", "6",
]
SMALL_MODEL = [
    "--model.d_trs", "16", "--model.d_prd", "16", "--model.d_joint", "16",
    "--model.d_emb", "8", "--model.vocab_size", "8", "--model.input_dim", "6",
]
FAST_TRAIN = ["--train.epochs", "2", "--train.batch_size", "4"]


@pytest.fixture()
def corpus(tmp_path):
    out = tmp_path / "corpus"
    assert run(["synth", "--out", str(out), "--seed", "3", *SMALL_SYNTH]) == 0
    return out


class TestSynth:
    def test_same_seed_identical_trees(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["synth", "--out", str(a), "--seed", "1", *SMALL_SYNTH]) == 0
        assert run(["synth", "--out", str(b), "--seed", "1", *SMALL_SYNTH]) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_missing_out_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["synth", "--seed", "1"])
        assert exc.value.code == 2

    def test_refuses_existing_dir_without_force(self, corpus):
        assert run(["synth", "--out", str(corpus), "--seed", "3", *SMALL_SYNTH]) == 2
        assert run(["synth", "--out", str(corpus), "--seed", "3", "--force", *SMALL_SYNTH]) == 0

    def test_manifest_line_count(self, tmp_path):
        out = tmp_path / "c500"
        assert run(["synth", "--out", str(out), "--synth.train_utts", "500",
                    "--synth.dev_utts", "10"]) == 0
        assert len((out / "train.tsv").read_text().splitlines()) == 500


class TestMockTeacher:
    def test_writes_readable_trep(self, corpus, tmp_path, capsys):
        out = tmp_path / "t.trep"
        assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                    "--out", str(out), "--layers", "12", "--dim", "16",
                    "--lookahead", "1", "--variants", "4", "--seed", "5"]) == 0
        text = capsys.readouterr().out
        assert "L=12" in text and "D=16" in text and "variants=4" in text
        assert run(["inspect", str(out)]) == 0
        header = capsys.readouterr().out.splitlines()[0]
        assert "TREP v1" in header and "L=12" in header

    def test_same_seed_identical_files(self, corpus, tmp_path):
        a, b = tmp_path / "a.trep", tmp_path / "b.trep"
        for out in (a, b):
            assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                        "--out", str(out), "--layers", "2", "--dim", "8",
                        "--seed", "7"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_manifest(self, tmp_path):
        assert run(["mockteacher", "--manifest", str(tmp_path / "none.tsv"),
                    "--out", str(tmp_path / "x.trep")]) == 2


class TestTrain:
    def test_full_pipeline_with_kd(self, corpus, tmp_path, capsys):
        run_dir = tmp_path / "run"
        trep = tmp_path / "mock.trep"
        assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                    "--out", str(trep), "--layers", "4", "--dim", "8",
                    "--lookahead", "1", "--seed", "2"]) == 0
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "1", *SMALL_MODEL, *FAST_TRAIN]) == 0
        assert (run_dir / "iter1.ckpt").exists()
        assert (run_dir / "iter1.alnq").exists()
        assert (run_dir / "resolved.cfg").exists()
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "2", "--kd.teacher_reps", str(trep),
                    "--kd.strategy", "uniform", "--kd.layers_k", "2",
                    *SMALL_MODEL, *FAST_TRAIN]) == 0
        capsys.readouterr()
        lines = (run_dir / "iter2.metrics.tsv").read_text().splitlines()
        assert len(lines) == 2
        assert all(float(l.split("\t")[2]) > 0 for l in lines)  # kd loss active

    def test_lambda_zero_logs_zero_kd(self, corpus, tmp_path):
        run_dir = tmp_path / "run0"
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "1", *SMALL_MODEL, *FAST_TRAIN]) == 0
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "2", "--kd.lambda", "0", *SMALL_MODEL, *FAST_TRAIN]) == 0
        for line in (run_dir / "iter2.metrics.tsv").read_text().splitlines():
            assert float(line.split("\t")[2]) == 0.0

    def test_oversized_layers_k_is_config_error(self, corpus, tmp_path):
        run_dir = tmp_path / "runk"
        trep = tmp_path / "m.trep"
        assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                    "--out", str(trep), "--layers", "12", "--dim", "8"]) == 0
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "1", *SMALL_MODEL, *FAST_TRAIN]) == 0
        code = run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "2", "--kd.teacher_reps", str(trep),
                    "--kd.strategy", "uniform", "--kd.layers_k", "13",
                    *SMALL_MODEL, *FAST_TRAIN])
        assert code == 2

    def test_missing_teacher_reps_exit_3(self, corpus, tmp_path, capsys):
        run_dir = tmp_path / "runm"
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "1", *SMALL_MODEL, *FAST_TRAIN]) == 0
        capsys.readouterr()
        missing = tmp_path / "ghost.trep"
        code = run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "2", "--kd.teacher_reps", str(missing),
                    *SMALL_MODEL, *FAST_TRAIN])
        assert code == 3
        assert "ghost.trep" in capsys.readouterr().err

    def test_determinism_across_full_runs(self, corpus, tmp_path):
        trep = tmp_path / "d.trep"
        assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                    "--out", str(trep), "--layers", "4", "--dim", "8",
                    "--lookahead", "1", "--seed", "2"]) == 0
        logs = []
        for name in ("r1", "r2"):
            run_dir = tmp_path / name
            assert run(["train", "--data.dir", str(corpus), "--train.run_dir",
                        str(run_dir), "--iter", "both",
                        "--kd.teacher_reps", str(trep),
                        *SMALL_MODEL, *FAST_TRAIN]) == 0
            logs.append(
                (run_dir / "iter1.metrics.tsv").read_text()
                + (run_dir / "iter2.metrics.tsv").read_text()
            )
        assert logs[0] == logs[1]


class TestEval:
    @pytest.fixture()
    def trained(self, corpus, tmp_path):
        run_dir = tmp_path / "trained"
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "1", *SMALL_MODEL, *FAST_TRAIN]) == 0
        return run_dir

    def test_matches_trainer_logged_dev_wer(self, corpus, trained, capsys):
        logged = float((trained / "iter1.metrics.tsv").read_text()
                       .splitlines()[-1].split("\t")[4])
        capsys.readouterr()
        assert run(["eval", "--eval.checkpoint", str(trained / "iter1.ckpt"),
                    "--data.dir", str(corpus), *SMALL_MODEL]) == 0
        out = capsys.readouterr().out
        wer_line = next(l for l in out.splitlines() if l.startswith("corpus WER"))
        assert float(wer_line.split()[2]) == pytest.approx(logged, abs=1e-6)

    def test_report_file_written(self, corpus, trained, tmp_path):
        report = tmp_path / "rep.tsv"
        assert run(["eval", "--eval.checkpoint", str(trained / "iter1.ckpt"),
                    "--data.dir", str(corpus), "--report", str(report),
                    *SMALL_MODEL]) == 0
        lines = report.read_text().splitlines()
        assert lines[0].startswith("utt_id")
        assert len(lines) == 1 + 6  # header + dev utterances

    def test_config_mismatch_exit_3(self, corpus, trained):
        code = run(["eval", "--eval.checkpoint", str(trained / "iter1.ckpt"),
                    "--data.dir", str(corpus), *SMALL_MODEL, "--model.d_trs", "24"])
        assert code == 3

    def test_empty_dataset_exit_2(self, corpus, trained, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        code = run(["eval", "--eval.checkpoint", str(trained / "iter1.ckpt"),
                    "--eval.manifest", str(empty), *SMALL_MODEL])
        assert code == 2

    def test_missing_checkpoint_exit_3(self, corpus, tmp_path):
        code = run(["eval", "--eval.checkpoint", str(tmp_path / "none.ckpt"),
                    "--data.dir", str(corpus)])
        assert code == 3


class TestInspect:
    def test_all_formats(self, corpus, tmp_path, capsys):
        run_dir = tmp_path / "ri"
        assert run(["train", "--data.dir", str(corpus), "--train.run_dir", str(run_dir),
                    "--iter", "1", *SMALL_MODEL, *FAST_TRAIN]) == 0
        capsys.readouterr()

        assert run(["inspect", str(run_dir / "iter1.alnq")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("ALNQ v1")
        assert "rows sum to 1.000" in out

        assert run(["inspect", str(run_dir / "iter1.ckpt")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("TKDM v1") and "enc.w0" in out

        frm = next((corpus / "frames").glob("*.frm"))
        assert run(["inspect", str(frm)]) == 0
        assert capsys.readouterr().out.startswith("FRMS")

    def test_unknown_magic_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "junk.bin"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert run(["inspect", str(bad)]) == 2
        assert "JUNK" in capsys.readouterr().err

    def test_corrupt_file_graceful(self, corpus, tmp_path, capsys):
        trep = tmp_path / "c.trep"
        assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                    "--out", str(trep), "--layers", "2", "--dim", "4"]) == 0
        trep.write_bytes(trep.read_bytes()[:-7])
        assert run(["inspect", str(trep)]) == 2

    def test_trep_utt_norms(self, corpus, tmp_path, capsys):
        trep = tmp_path / "n.trep"
        assert run(["mockteacher", "--manifest", str(corpus / "train.tsv"),
                    "--out", str(trep), "--layers", "2", "--dim", "4",
                    "--variants", "2"]) == 0
        first = (corpus / "train.tsv").read_text().splitlines()[0].split("\t")[0]
        capsys.readouterr()
        assert run(["inspect", str(trep), "--utt", first, "--layer", "2"]) == 0
        out = capsys.readouterr().out
        assert "variant=0" in out and "variant=1" in out and "norms=" in out


class TestConfigFile:
    def test_file_and_override_precedence(self, corpus, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment line\n"
            "train.epochs = 2\n"
            "train.batch_size = 4\n"
            "model.d_trs = 16\nmodel.d_prd = 16\nmodel.d_joint = 16\nmodel.d_emb = 8\n"
            "model.vocab_size = 8\nmodel.input_dim = 6\n"
        )
        run_dir = tmp_path / "rc"
        assert run(["train", "--config", str(cfg), "--data.dir", str(corpus),
                    "--train.run_dir", str(run_dir), "--iter", "1",
                    "--train.epochs", "3"]) == 0
        # CLI override (3 epochs) beats the file (2)
        assert len((run_dir / "iter1.metrics.tsv").read_text().splitlines()) == 3
        resolved = (run_dir / "resolved.cfg").read_text()
        assert "train.epochs = 3" in resolved

    def test_unknown_key_rejected(self, corpus, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("train.epochz = 2\n")
        assert run(["train", "--config", str(cfg), "--data.dir", str(corpus)]) == 2


class TestThreadCap:
    def test_env_var_applied(self, monkeypatch):
        monkeypatch.setenv("REPKD_THREADS", "1")
        monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
        with pytest.raises(SystemExit):
            main(["--help"])
        assert os.environ["OMP_NUM_THREADS"] == "1"
