"""Command line: sia-export SPEC [-o OUT_BASE] [--checkpoint PATH]."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .export import export
from .spec import ExportError, load_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sia-export", description=__doc__)
    parser.add_argument("spec", help="YAML/JSON export specification")
    parser.add_argument("-o", "--out", default=None, help="output bundle base path")
    parser.add_argument("--checkpoint", default=None, help="override the spec's checkpoint")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
        if args.checkpoint:
            spec = replace(spec, checkpoint=Path(args.checkpoint))
        manifest, blob = export(spec, out=args.out)
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest} and {blob}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
