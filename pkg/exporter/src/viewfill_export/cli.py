"""Command-line front door: embed, scores, or both from one manifest."""

import argparse
import logging
import sys
from typing import Optional, Sequence

from viewfill import DimensionMismatch, FormatError, validate_file

from .export import ClassCountMismatch, export_embeddings, export_scores
from .manifest import ManifestError, load_manifest

EXIT_OK = 0
EXIT_MANIFEST = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewfill-export",
        description="export image trees to viewfill embedding/score files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("embed", "export embedding files for both views"),
        ("scores", "export classifier score files for both views"),
        ("all", "export embeddings then scores"),
    ):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--manifest", required=True, help="path to the manifest file")
    return parser


def _run(command: str, manifest) -> None:
    results = []
    if command in ("embed", "all"):
        results.append(export_embeddings(manifest))
    if command in ("scores", "all"):
        results.append(export_scores(manifest))
    for result in results:
        for path, count, skipped in zip(result.paths, result.exported, result.skipped):
            note = f", {skipped} skipped" if skipped else ""
            print(f"{validate_file(path)}  ({count} exported{note})")


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
        _run(args.command, manifest)
    except (ManifestError, ClassCountMismatch, ValueError) as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (FormatError, DimensionMismatch, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
