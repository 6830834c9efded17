"""export-weights: convert a VGG-16 checkpoint to NPW1."""

from __future__ import annotations

import argparse
import sys

from .convert import ExportError, ExportManifest, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-weights",
        description="Extract the 8-layer VGG-16 prefix from a checkpoint "
        "(.pth/.pt state_dict or .npz) into an NPW1 weight file.",
    )
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        report = export(ExportManifest(checkpoint=args.checkpoint, out=args.out))
    except FileNotFoundError as exc:
        print(f"export-weights: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except ExportError as exc:
        print(f"export-weights: {exc}", file=sys.stderr)
        return 1
    for line in report.lines():
        print(line)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
