"""Operator entry point: synth, mockteacher, train, eval, inspect.

Exit codes: 0 success, 2 usage/configuration error, 3 missing or
incompatible artifact, 1 runtime failure (e.g. diverged training).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_cap() -> None:
    cap = os.environ.get("REPKD_THREADS")
    if cap:
        for var in _THREAD_VARS:
            os.environ[var] = cap


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    from .config import DEFAULTS

    parser.add_argument("--config", metavar="FILE", help="flat section.key = value file")
    group = parser.add_argument_group("config overrides")
    for key in DEFAULTS:
        group.add_argument(f"--{key}", dest=key, metavar="V", help=argparse.SUPPRESS)


def _collect_overrides(args: argparse.Namespace) -> dict[str, object]:
    from .config import DEFAULTS

    out = {}
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _resolve(args: argparse.Namespace):
    from .config import RunConfig

    cfg = RunConfig.resolve(getattr(args, "config", None), _collect_overrides(args))
    print("# resolved configuration")
    for line in cfg.dump().splitlines():
        print(f"#   {line}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repkd",
        description="Desk-scale transducer ASR training with teacher-representation distillation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic toy corpus")
    p_synth.add_argument("--out", required=True, help="output corpus directory")
    p_synth.add_argument("--force", action="store_true", help="overwrite an existing directory")
    p_synth.add_argument("--seed", type=int, help="shorthand for --synth.seed")
    _add_config_flags(p_synth)

    p_mock = sub.add_parser("mockteacher", help="generate mock teacher representations")
    p_mock.add_argument("--manifest", required=True, help="corpus manifest to cover")
    p_mock.add_argument("--out", required=True, help="output TREP file")
    p_mock.add_argument("--layers", type=int, default=4)
    p_mock.add_argument("--dim", type=int, default=32, help="hidden dim per layer")
    p_mock.add_argument("--lookahead", type=int, default=1, help="token window half-width")
    p_mock.add_argument("--variants", type=int, default=1, help="context variants incl. unmasked")
    p_mock.add_argument("--seed", type=int, default=0)
    p_mock.add_argument("--teacher-id", default="mock")
    p_mock.add_argument("--vocab-size", type=int, default=0, help="0 = infer from corpus")

    p_train = sub.add_parser("train", help="run the two-iteration training recipe")
    p_train.add_argument("--iter", choices=("1", "2", "both"), help="shorthand for --train.iter")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval", help="decode a dataset and report WER")
    p_eval.add_argument("--report", help="shorthand for --eval.report")
    _add_config_flags(p_eval)

    p_inspect = sub.add_parser("inspect", help="dump headers of binary artifacts")
    p_inspect.add_argument("path", help="TREP/ALNQ/TKDM/FRMS file")
    p_inspect.add_argument("--utt", help="show details for one utterance id")
    p_inspect.add_argument("--layer", type=int, help="layer index for --utt vector norms")

    return parser


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from . import data
    from .errors import InvalidConfig

    if args.seed is not None:
        setattr(args, "synth.seed", str(args.seed))
    cfg = _resolve(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise InvalidConfig(f"output directory {out} exists; pass --force to overwrite")
    v = cfg.values
    base = dict(
        vocab_size=v["synth.vocab_size"],
        min_tokens=v["synth.min_tokens"],
        max_tokens=v["synth.max_tokens"],
        min_frames_per_token=v["synth.min_frames_per_token"],
        max_frames_per_token=v["synth.max_frames_per_token"],
        input_dim=v["synth.input_dim"],
        noise=v["synth.noise"],
        seed=v["synth.seed"],
    )
    train = data.generate_synth_corpus(
        data.SynthSpec(utterances=v["synth.train_utts"], id_prefix="train", **base)
    )
    dev = data.generate_synth_corpus(
        data.SynthSpec(utterances=v["synth.dev_utts"], id_prefix="dev", **base)
    )
    out.mkdir(parents=True, exist_ok=True)
    train_manifest = data.write_corpus_split(out, train, v["data.train_manifest"])
    dev_manifest = data.write_corpus_split(out, dev, v["data.dev_manifest"])
    data.write_vocab(out / v["data.vocab"], data.synth_vocab(v["synth.vocab_size"]))
    total_frames = sum(u.frames.shape[0] for u in train + dev)
    print(f"wrote {train_manifest} ({len(train)} utterances)")
    print(f"wrote {dev_manifest} ({len(dev)} utterances)")
    print(
        f"corpus: |V|={v['synth.vocab_size']} input_dim={v['synth.input_dim']} "
        f"total_raw_frames={total_frames}"
    )
    print(f"digest: {data.corpus_digest(out)}")
    return 0


def cmd_mockteacher(args) -> int:
    from . import data

    manifest = Path(args.manifest)
    utts = data.read_manifest(manifest, load_frames=False)
    vocab_size = args.vocab_size
    if vocab_size <= 0:
        vocab_file = manifest.parent / "vocab.txt"
        if vocab_file.exists():
            vocab_size = len(data.read_vocab(vocab_file))
        else:
            vocab_size = max(max(u.tokens, default=0) for u in utts) + 1
    reps = data.generate_mock_reps(
        utts,
        vocab_size=vocab_size,
        layers=args.layers,
        hidden_dim=args.dim,
        lookahead=args.lookahead,
        seed=args.seed,
        variants=args.variants,
        teacher_id=args.teacher_id,
    )
    data.write_teacher_reps(args.out, reps)
    print(
        f"TREP v1 teacher={reps.teacher_id} L={reps.layers} D={reps.hidden_dim} "
        f"variants={reps.variants} utts={len(reps.utts)}"
    )
    print(f"wrote {args.out}")
    return 0


def _load_corpus(cfg):
    from . import data
    from .errors import InvalidConfig

    root = Path(str(cfg["data.dir"]))
    if not str(cfg["data.dir"]):
        raise InvalidConfig("data.dir is not set")
    train = data.read_manifest(root / str(cfg["data.train_manifest"]))
    dev = data.read_manifest(root / str(cfg["data.dev_manifest"]))
    vocab_path = root / str(cfg["data.vocab"])
    vocab = data.read_vocab(vocab_path) if vocab_path.exists() else None
    return train, dev, vocab


def cmd_train(args) -> int:
    from . import data, formats, trainer
    from .errors import InvalidConfig, MissingArtifact

    if args.iter is not None:
        setattr(args, "train.iter", args.iter)
    cfg = _resolve(args)
    which = str(cfg["train.iter"])
    if which not in ("1", "2", "both"):
        raise InvalidConfig(f"train.iter must be 1, 2 or both, got {which!r}")
    train_utts, dev_utts, vocab = _load_corpus(cfg)
    model_cfg = cfg.model_config()
    if vocab is not None and len(vocab) != model_cfg.vocab_size:
        raise InvalidConfig(
            f"model.vocab_size={model_cfg.vocab_size} but corpus vocab has {len(vocab)} entries"
        )
    train_cfg = cfg.train_config()
    run_dir = Path(str(cfg["train.run_dir"]))
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "resolved.cfg").write_text(cfg.dump() + "\n", encoding="utf-8")
    resume = Path(str(cfg["train.resume"])) if str(cfg["train.resume"]) else None
    if resume is not None and which == "both":
        raise InvalidConfig("train.resume needs train.iter=1 or 2, not both")

    if which in ("1", "both"):
        _, metrics = trainer.train_iteration1(
            model_cfg, train_cfg, train_utts, dev_utts, vocab, run_dir,
            resume_from=resume,
        )
        print(f"iteration 1 done: final dev WER {metrics[-1].dev_wer:.4f}")
        print(f"wrote {run_dir / trainer.ITER1_CHECKPOINT}")
        print(f"wrote {run_dir / trainer.POSTERIOR_FILE}")

    if which in ("2", "both"):
        ckpt = run_dir / trainer.ITER1_CHECKPOINT
        alnq = run_dir / trainer.POSTERIOR_FILE
        if not alnq.exists():
            raise MissingArtifact(f"frozen posteriors not found: {alnq}")
        frozen_q = formats.read_posteriors(alnq)
        teacher_sets = []
        if train_cfg.kd_weight > 0.0:
            paths = cfg.teacher_rep_paths()
            if not paths:
                raise MissingArtifact(
                    "distillation is enabled (kd.lambda > 0) but kd.teacher_reps is empty; "
                    "expected one or more TREP paths"
                )
            expected = {u.id: len(u.tokens) for u in train_utts}
            for p in paths:
                if not p.exists():
                    raise MissingArtifact(f"teacher representations not found: {p}")
                teacher_sets.append(data.read_teacher_reps(p, expected_tokens=expected))
            if train_cfg.teacher_ids:
                keep = set(train_cfg.teacher_ids)
                teacher_sets = [s for s in teacher_sets if s.teacher_id in keep]
        _, metrics = trainer.train_iteration2(
            model_cfg, train_cfg, train_utts, dev_utts, vocab, run_dir,
            ckpt, teacher_sets, frozen_q if train_cfg.kd_weight > 0 else {},
            resume_from=resume,
        )
        print(f"iteration 2 done: final dev WER {metrics[-1].dev_wer:.4f}")
        print(f"wrote {run_dir / trainer.ITER2_CHECKPOINT}")
    return 0


def cmd_eval(args) -> int:
    from . import data, formats, model as model_mod, trainer
    from .errors import ConsistencyError, InvalidConfig, MissingArtifact

    if args.report is not None:
        setattr(args, "eval.report", args.report)
    cfg = _resolve(args)
    ckpt_path = Path(str(cfg["eval.checkpoint"]))
    if not str(cfg["eval.checkpoint"]):
        raise InvalidConfig("eval.checkpoint is not set")
    if not ckpt_path.exists():
        raise MissingArtifact(f"checkpoint not found: {ckpt_path}")
    manifest = str(cfg["eval.manifest"])
    if manifest:
        utts = data.read_manifest(Path(manifest))
        vocab_path = Path(manifest).parent / str(cfg["data.vocab"])
        vocab = data.read_vocab(vocab_path) if vocab_path.exists() else None
    else:
        _, utts, vocab = _load_corpus(cfg)
    if not utts:
        raise InvalidConfig("evaluation dataset is empty")
    model_cfg = cfg.model_config()
    digest, blobs = formats.read_checkpoint(ckpt_path)
    model = model_mod.load_student(model_cfg, blobs)
    if digest != model.digest():
        raise ConsistencyError(
            f"{ckpt_path}: checkpoint digest {digest} does not match the configured "
            f"model ({model.digest()}); check the model.* settings"
        )
    report = trainer.evaluate(model, utts, vocab, int(cfg["eval.max_symbols_per_frame"]))
    skipped = sum(1 for r in report.rows if r.skipped)
    print(f"utterances: {len(report.rows)} (skipped {skipped} with empty reference)")
    print(f"corpus WER: {report.corpus_wer:.6f} "
          f"({report.total_edits} edits / {report.total_ref_words} words)")
    out = str(cfg["eval.report"])
    if out:
        trainer.write_eval_report(out, report)
        print(f"wrote {out}")
    return 0


def cmd_inspect(args) -> int:
    import numpy as np

    from . import data, formats
    from .errors import FormatError, InvalidInput

    path = Path(args.path)
    if not path.exists():
        raise InvalidInput(f"no such file: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)

    if magic == formats.TEACHER_MAGIC:
        reps = data.read_teacher_reps(path)
        print(
            f"TREP v1 teacher={reps.teacher_id} L={reps.layers} D={reps.hidden_dim} "
            f"variants={reps.variants} utts={len(reps.utts)}"
        )
        if args.utt:
            arr = reps.utts.get(args.utt)
            if arr is None:
                raise InvalidInput(f"utterance {args.utt!r} not in file")
            layer = args.layer or reps.layers
            for v in range(reps.variants):
                norms = np.linalg.norm(reps.get(args.utt, v, layer), axis=1)
                print(f"  {args.utt} variant={v} layer={layer} "
                      f"norms={' '.join(f'{x:.4f}' for x in norms)}")
    elif magic == formats.POSTERIOR_MAGIC:
        table = formats.read_posteriors(path)
        print(f"ALNQ v1 utts={len(table)}")
        items = [(args.utt, table[args.utt])] if args.utt else table.items()
        for utt_id, q in items:
            sums = q.sum(axis=1)
            level = sums.mean() if q.shape[0] else 1.0
            print(f"  {utt_id}: N={q.shape[0]} T={q.shape[1]} rows sum to {level:.3f}")
    elif magic == formats.CHECKPOINT_MAGIC:
        digest, blobs = formats.read_checkpoint(path)
        print(f"TKDM v1 digest={digest} blobs={len(blobs)}")
        for name, arr in blobs.items():
            print(f"  {name}: shape={tuple(arr.shape)}")
    elif magic == formats.FRAMES_MAGIC:
        frames = formats.read_frames(path)
        print(f"FRMS T_raw={frames.shape[0]} D_in={frames.shape[1]}")
    else:
        raise FormatError(f"{path}: unknown magic {magic!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import (
        ConsistencyError,
        DegenerateModel,
        FormatError,
        InvalidConfig,
        InvalidInput,
        MissingArtifact,
    )

    handlers = {
        "synth": cmd_synth,
        "mockteacher": cmd_mockteacher,
        "train": cmd_train,
        "eval": cmd_eval,
        "inspect": cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except (InvalidConfig, InvalidInput, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (MissingArtifact, ConsistencyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except DegenerateModel as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
