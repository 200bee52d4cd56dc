"""Command line: ``python -m leaflite_export --output DIR [--weights random|imagenet]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .names import UnmappedError


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="leaflite-export", description=__doc__)
    p.add_argument("--output", required=True, type=Path, help="directory for backbone.lwts, golden.lwts and the manifest")
    p.add_argument("--weights", choices=["random", "imagenet"], default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixtures", type=int, default=5)
    args = p.parse_args(argv)

    from .export import build_zoo_model, dump_golden, export_backbone, fixture_images

    try:
        model = build_zoo_model(args.weights, args.seed)
        manifest = export_backbone(args.output / "backbone.lwts", model, args.weights, args.seed)
        dump_golden(args.output / "golden.lwts", model, fixture_images(args.fixtures, args.seed), manifest)
    except (UnmappedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest.write(args.output)
    print(f"wrote {len(manifest.mapping)} tensors and {len(manifest.fixtures)} fixtures to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
