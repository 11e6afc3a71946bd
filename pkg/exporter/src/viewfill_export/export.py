"""Batch inference over per-view image trees; writes core binary files.

Layout: ``root/<view_subdir>/<class_name>/<image>``. A sample's id is its
path relative to the view subdirectory, so the two views of one sample
share an id when their relative paths match. Images are processed in
sorted-path order; unreadable files are skipped with a warning and
counted, never fatal.
"""

import dataclasses
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from viewfill import (
    EmbeddingRecord,
    EmbeddingSet,
    ScoreSet,
    ScoreVector,
    write_embedding_file,
    write_score_file,
)

from .backbones import build_backbone
from .manifest import ExportManifest, ManifestError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ClassCountMismatch(ValueError):
    """Classifier checkpoint rows do not match the manifest's class table."""


@dataclasses.dataclass(frozen=True)
class ExportResult:
    """What one export wrote: paths, per-view record/skip counts, geometry."""

    paths: tuple[Path, Path]
    exported: tuple[int, int]
    skipped: tuple[int, int]
    dim: int
    n_classes: int


def discover_images(manifest: ExportManifest, view_index: int):
    """Sorted (relative id, class name, absolute path) triples of one view."""
    view_root = manifest.root / manifest.view_dirs[view_index]
    items = []
    for class_dir in sorted(p for p in view_root.iterdir() if p.is_dir()):
        for path in sorted(class_dir.rglob("*")):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                items.append(
                    (path.relative_to(view_root).as_posix(), class_dir.name, path)
                )
    return items


def _class_table(manifest: ExportManifest, per_view_items) -> dict[str, int]:
    encountered = sorted({name for items in per_view_items for _, name, _ in items})
    if manifest.class_names is not None:
        missing = [n for n in encountered if n not in manifest.class_names]
        if missing:
            raise ManifestError(
                f"class directories {missing} are not in the manifest classes list"
            )
        return {name: idx for idx, name in enumerate(manifest.class_names)}
    if len(encountered) < 2:
        raise ManifestError(
            f"need at least 2 class directories, found {encountered or 'none'}"
        )
    return {name: idx for idx, name in enumerate(encountered)}


def _load_image(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.Resampling.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return arr.transpose(2, 0, 1)


def _features_for_view(model, items, manifest: ExportManifest):
    """Run the backbone over readable images; returns kept items + features."""
    kept, arrays = [], []
    skipped = 0
    for rel, cls, path in items:
        try:
            arrays.append(_load_image(path, manifest.image_size))
        except (OSError, ValueError) as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            skipped += 1
            continue
        kept.append((rel, cls))
    if skipped:
        logger.warning("skipped %d unreadable image(s)", skipped)
    if not arrays:
        return kept, np.zeros((0, 0), dtype=np.float32), skipped
    chunks = []
    with torch.no_grad():
        for start in range(0, len(arrays), manifest.batch_size):
            batch = torch.from_numpy(np.stack(arrays[start : start + manifest.batch_size]))
            chunks.append(model(batch).numpy().astype(np.float32))
    return kept, np.concatenate(chunks, axis=0), skipped


def export_embeddings(manifest: ExportManifest) -> ExportResult:
    """Write one embedding file per view; one record per readable image."""
    model, width = build_backbone(
        manifest.backbone, manifest.seed, manifest.backbone_checkpoint
    )
    per_view_items = [discover_images(manifest, v) for v in (0, 1)]
    table = _class_table(manifest, per_view_items)
    exported, skipped_counts = [], []
    for view, items in enumerate(per_view_items):
        kept, feats, skipped = _features_for_view(model, items, manifest)
        records = tuple(
            EmbeddingRecord(rel, table[cls], view, feats[i])
            for i, (rel, cls) in enumerate(kept)
        )
        embeddings = EmbeddingSet(
            dim=width, n_views=2, n_classes=len(table), records=records
        )
        out = manifest.out_embeddings[view]
        out.parent.mkdir(parents=True, exist_ok=True)
        write_embedding_file(embeddings, out)
        logger.info("view %d: %d embedding records -> %s", view, len(records), out)
        exported.append(len(records))
        skipped_counts.append(skipped)
    return ExportResult(
        paths=manifest.out_embeddings,
        exported=tuple(exported),
        skipped=tuple(skipped_counts),
        dim=width,
        n_classes=len(table),
    )


def _load_classifier(path: Path, width: int, n_classes: int):
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "weight" not in state:
        raise ManifestError(f"classifier checkpoint {path} has no 'weight' tensor")
    weight = state["weight"]
    if weight.ndim != 2 or weight.shape[1] != width:
        raise ClassCountMismatch(
            f"classifier {path} expects features of width {tuple(weight.shape)[-1]}, "
            f"backbone produces {width}"
        )
    if weight.shape[0] != n_classes:
        raise ClassCountMismatch(
            f"classifier {path} has {weight.shape[0]} classes, manifest has {n_classes}"
        )
    bias = state.get("bias")
    if bias is None:
        bias = torch.zeros(weight.shape[0])
    return weight, bias


def export_scores(manifest: ExportManifest) -> ExportResult:
    """Write one softmax score file per view using the supplied classifiers."""
    for view in (0, 1):
        if manifest.classifier_paths[view] is None:
            raise ManifestError(f"classifier_view{view}= is required to export scores")
    model, width = build_backbone(
        manifest.backbone, manifest.seed, manifest.backbone_checkpoint
    )
    per_view_items = [discover_images(manifest, v) for v in (0, 1)]
    table = _class_table(manifest, per_view_items)
    exported, skipped_counts = [], []
    for view, items in enumerate(per_view_items):
        weight, bias = _load_classifier(
            manifest.classifier_paths[view], width, len(table)
        )
        kept, feats, skipped = _features_for_view(model, items, manifest)
        with torch.no_grad():
            logits = torch.from_numpy(feats) @ weight.T + bias
            probs = torch.softmax(logits, dim=1).numpy().astype(np.float32)
        records = tuple(
            ScoreVector(rel, probs[i], label=table[cls])
            for i, (rel, cls) in enumerate(kept)
        )
        scores = ScoreSet(n_classes=len(table), records=records)
        out = manifest.out_scores[view]
        out.parent.mkdir(parents=True, exist_ok=True)
        write_score_file(scores, out)
        logger.info("view %d: %d score records -> %s", view, len(records), out)
        exported.append(len(records))
        skipped_counts.append(skipped)
    return ExportResult(
        paths=manifest.out_scores,
        exported=tuple(exported),
        skipped=tuple(skipped_counts),
        dim=width,
        n_classes=len(table),
    )
