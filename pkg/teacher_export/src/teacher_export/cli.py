"""CLI with two subcommands: export teacher representations, verify files."""

from __future__ import annotations

import argparse
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repkd-teacher-export",
        description="Extract all-layer teacher representations into TREP files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="run a teacher checkpoint over a manifest")
    p_exp.add_argument("--model", required=True, help="checkpoint path or hub id")
    p_exp.add_argument("--manifest", required=True)
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--context", type=int, default=60, help="total context token budget")
    p_exp.add_argument("--mask-rate", type=float, default=0.10)
    p_exp.add_argument("--variants", type=int, default=4)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--batch-size", type=int, default=8)
    p_exp.add_argument("--teacher-id", help="id stored in the header (default: --model)")

    p_ver = sub.add_parser("verify", help="validate a TREP file against a manifest")
    p_ver.add_argument("--in", dest="path", required=True)
    p_ver.add_argument("--manifest", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    from .export import ExportError, ExportJob, export_reps
    from .manifest import ManifestError
    from .trep import TrepError, read_header
    from .verify import verify_trep

    try:
        if args.command == "export":
            job = ExportJob(
                model_id=args.model,
                manifest_path=args.manifest,
                out_path=args.out,
                context_budget=args.context,
                mask_rate=args.mask_rate,
                variants=args.variants,
                seed=args.seed,
                batch_size=args.batch_size,
                teacher_id=args.teacher_id,
            )
            out = export_reps(job)
            h = read_header(out)
            print(
                f"TREP v1 teacher={h['teacher_id']} L={h['layers']} D={h['hidden_dim']} "
                f"variants={h['variants']} utts={h['utterances']}"
            )
            print(f"wrote {out}")
            return 0
        report = verify_trep(args.path, args.manifest)
        for line in report.lines():
            print(line)
        return 0 if report.ok else 1
    except (ExportError, ManifestError, TrepError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
