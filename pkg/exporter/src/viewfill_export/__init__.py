"""Adapter from image directory trees to viewfill embedding/score files.

The exporter never trains anything: it runs a frozen backbone over every
image under the per-view subdirectories and writes the core binary
formats. Classifier checkpoints for score export are supplied by the
user.
"""

from .backbones import BACKBONE_WIDTHS, backbone_width, build_backbone
from .export import (
    ClassCountMismatch,
    ExportResult,
    discover_images,
    export_embeddings,
    export_scores,
)
from .manifest import ExportManifest, ManifestError, load_manifest, parse_manifest_text

__all__ = [
    "BACKBONE_WIDTHS",
    "ClassCountMismatch",
    "ExportManifest",
    "ExportResult",
    "ManifestError",
    "backbone_width",
    "build_backbone",
    "discover_images",
    "export_embeddings",
    "export_scores",
    "load_manifest",
    "parse_manifest_text",
]
