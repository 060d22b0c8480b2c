"""Command-line front end: images in, .fmap files out."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import PRESETS, ExtractConfig, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmap-extract",
        description="Export post-ReLU conv activations from a CNN as .fmap files.",
    )
    parser.add_argument("--model", default="vgg16", help="model architecture")
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--layers", type=int, nargs="+",
        help="1-based conv-layer ordinals (pooling not counted)",
    )
    group.add_argument(
        "--preset", choices=sorted(PRESETS),
        help="named layer selection, e.g. vgg16-paper",
    )
    parser.add_argument("--images", required=True, help="directory of images")
    parser.add_argument("--crops", help="YAML of image_id -> [x0, y0, x1, y1]")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--weights", help="state-dict file to load")
    parser.add_argument(
        "--pretrained", action="store_true",
        help="download torchvision pretrained weights",
    )
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for randomly initialized weights")
    return parser


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.preset:
        config = ExtractConfig.from_preset(
            args.preset, images=args.images, out=args.out, crops=args.crops,
            weights=args.weights, pretrained=args.pretrained, seed=args.seed,
        )
    else:
        config = ExtractConfig(
            model=args.model,
            conv_layers=args.layers or [9, 10, 12, 13],
            images=args.images, out=args.out, crops=args.crops,
            weights=args.weights, pretrained=args.pretrained, seed=args.seed,
        )
    try:
        written, errors = extract(config)
    except ValueError as exc:
        print(f"fmap-extract: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(written)} files, {len(errors)} errors")
    return 1 if errors else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
