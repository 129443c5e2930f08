"""Extraction command line: image folders in, tensor files + manifest out."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import ExtractSpec, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvextract",
        description="Export per-image patch-feature tensors from a frozen backbone",
    )
    parser.add_argument("--images", required=True, help="dataset root directory")
    parser.add_argument(
        "--layout",
        choices=["university1652", "sues200", "flat"],
        default="flat",
        help="dataset folder layout adapter",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--cls", action="store_true",
                        help="also export class tokens as 1x1 tensors (id suffix '#cls')")
    parser.add_argument("--backbone", default="toy-vit-p16",
                        help="toy-vit-p16 | toy-vit-p8 | timm:<name> | torchhub:<repo>:<entry>")
    parser.add_argument("--input-size", type=int, default=224)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    spec = ExtractSpec(
        backbone=args.backbone,
        input_size=args.input_size,
        batch_size=args.batch_size,
        device=args.device,
        layout=args.layout,
        export_cls=args.cls,
    )
    try:
        manifest = extract(args.images, spec, args.out)
    except ValueError as exc:
        print(f"cvextract: error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"cvextract: error: {exc}", file=sys.stderr)
        return 5
    print(f"manifest written to {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
