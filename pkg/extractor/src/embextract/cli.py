"""CLI: embextract extract --dataset ... --checkpoint ... --out ..."""

from __future__ import annotations

import argparse
import sys

from .backbone import BACKBONES
from .datasets import DATASETS
from .errors import ExtractError
from .extract import ExtractSpec, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embextract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed a dataset's splits into EMB1 files")
    p.add_argument("--dataset", required=True, choices=DATASETS)
    p.add_argument("--data-root", required=True, help="dataset folder")
    p.add_argument("--backbone", required=True, choices=BACKBONES)
    p.add_argument("--checkpoint", required=True, help="local checkpoint file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--splits", default="", help="comma-separated subset of splits")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--expect-d", type=int, default=None,
                   help="fail unless the backbone emits exactly this width")
    p.set_defaults(func=run_extract)
    return parser


def run_extract(args) -> int:
    spec = ExtractSpec(
        dataset=args.dataset,
        data_root=args.data_root,
        backbone=args.backbone,
        checkpoint=args.checkpoint,
        out_dir=args.out,
        splits=tuple(s for s in args.splits.split(",") if s),
        batch_size=args.batch_size,
        image_size=args.image_size,
        expect_d=args.expect_d,
    )
    manifest = extract(spec)
    for name, info in manifest["files"].items():
        print(f"{name}: n={info['n']} d={info['d']} sha256={info['sha256'][:12]}...")
    if manifest["head"]:
        print(f"classifier head: {manifest['head']}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
