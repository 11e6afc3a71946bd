"""Exact nearest-neighbor retrieval over one view's projected gallery.

The index stores every gallery feature explicitly and ranks by exhaustive
distance computation, so results are exact and reproducible. A cache file
embeds a checksum of the projection head checkpoint that produced the
features; loading against a different head fails instead of silently
serving stale neighbors.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import (
    CacheMismatch,
    DimensionMismatch,
    EmbeddingSet,
    EmptyIndexError,
    FormatError,
    l2_normalize,
)
from .fileio import ByteReader, FORMAT_VERSION, fnv1a64
from .metric import ProjectionHead, serialize_head

MAGIC_INDEX = b"MVIX"


@dataclass(frozen=True)
class RetrievalIndex:
    """Projected gallery of one view: parallel ids, labels, unit features."""

    view: int
    ids: tuple[str, ...]
    labels: tuple[int, ...]
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        feats = np.asarray(self.features, dtype=np.float64)
        if len(self.ids) != len(set(self.ids)):
            raise ValueError("duplicate ids in index")
        if feats.ndim != 2 or feats.shape[0] != len(self.ids) or len(self.labels) != len(self.ids):
            raise DimensionMismatch(
                f"index arrays disagree: {len(self.ids)} ids, {len(self.labels)} labels, "
                f"features shape {feats.shape}"
            )
        norms = np.linalg.norm(feats, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise ValueError("index features must be unit norm")
        feats = feats.copy()
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


def build_index(gallery: EmbeddingSet, head: ProjectionHead) -> RetrievalIndex:
    """Project the gallery records matching the head's view and index them.

    An empty gallery builds an empty index; the error comes later, from
    ranking against it.
    """
    records = [r for r in gallery.records if r.view == head.view]
    if records:
        feats = head.project_matrix(np.stack([r.vector for r in records]))
    else:
        feats = np.empty((0, head.d_out))
    return RetrievalIndex(
        view=head.view,
        ids=tuple(r.id for r in records),
        labels=tuple(r.label for r in records),
        features=feats,
    )


@dataclass(frozen=True)
class Ranking:
    """Full gallery ordering for one query, nearest first."""

    ids: tuple[str, ...]
    labels: tuple[int, ...]
    distances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        d = np.asarray(self.distances, dtype=np.float64).copy()
        d.flags.writeable = False
        object.__setattr__(self, "distances", d)

    def __len__(self) -> int:
        return len(self.ids)


def rank(index: RetrievalIndex, query_feature: np.ndarray) -> Ranking:
    """Order the whole gallery by distance 2*(1 - q . f), ascending.

    Exact ties are broken by ascending gallery id, so the ordering is a
    pure function of the inputs.
    """
    if index.size == 0:
        raise EmptyIndexError("cannot rank against an empty index")
    q = np.asarray(query_feature, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatch(
            f"query has shape {q.shape}, index features have dim {index.dim}"
        )
    distances = np.clip(2.0 * (1.0 - index.features @ q), 0.0, 4.0)
    order = np.lexsort((np.asarray(index.ids), distances))
    return Ranking(
        ids=tuple(index.ids[i] for i in order),
        labels=tuple(index.labels[i] for i in order),
        distances=distances[order],
    )


def top_k(ranking: Ranking, k: int) -> Ranking:
    """First k entries of a ranking; k beyond the gallery clamps with a warning."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = len(ranking)
    if k > n:
        warnings.warn(f"k={k} exceeds gallery size {n}; clamping", stacklevel=2)
        k = n
    return Ranking(ranking.ids[:k], ranking.labels[:k], ranking.distances[:k])


def head_checksum(head: ProjectionHead) -> int:
    """Fingerprint of the checkpoint bytes the index was built from."""
    return fnv1a64(serialize_head(head))


def save_index(index: RetrievalIndex, path: Union[str, Path], head: ProjectionHead) -> None:
    """Cache the index with the producing head's checkpoint checksum."""
    parts = [
        MAGIC_INDEX,
        struct.pack(
            "<HQHIQ", FORMAT_VERSION, head_checksum(head), index.view, index.dim, index.size
        ),
    ]
    for i in range(index.size):
        id_bytes = index.ids[i].encode("utf-8")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(struct.pack("<H", index.labels[i]))
        parts.append(np.asarray(index.features[i], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_index(path: Union[str, Path], head: Optional[ProjectionHead] = None) -> RetrievalIndex:
    """Load a cached index; refuses caches built from a different checkpoint.

    Pass the head that will serve queries. ``head=None`` skips the staleness
    check and is only meant for inspection tools.
    """
    reader = ByteReader(Path(path).read_bytes())
    reader.magic(MAGIC_INDEX)
    version = reader.u16("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported index version {version}", offset=4)
    checksum = reader.u64("head checksum")
    view = reader.u16("view")
    dim = reader.u32("dim")
    count = reader.u64("entry count")
    if dim == 0:
        raise FormatError("zero feature dim in index", offset=16)
    if head is not None:
        expected = head_checksum(head)
        if checksum != expected:
            raise CacheMismatch(
                f"index was built from checkpoint {checksum:#018x}, "
                f"current head is {expected:#018x}; rebuild the index"
            )
        if head.view != view:
            raise CacheMismatch(f"index covers view {view}, head is for view {head.view}")
        if head.d_out != dim:
            raise CacheMismatch(f"index dim {dim} differs from head output dim {head.d_out}")
    ids = []
    labels = []
    feats = np.empty((count, dim))
    for i in range(count):
        id_len = reader.u16("entry id length")
        ids.append(reader.utf8(id_len, "entry id"))
        labels.append(reader.u16("entry label"))
        # f32 storage loses a little norm; restore exact unit length.
        feats[i] = l2_normalize(reader.f32_vector(dim, "entry feature"))
    reader.expect_eof()
    return RetrievalIndex(view=view, ids=tuple(ids), labels=tuple(labels), features=feats)
