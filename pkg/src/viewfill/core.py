"""Core data types and vector math shared by every pipeline stage.

Feature vectors live in memory as float64 arrays (dot products and
reductions stay in 64-bit); the on-disk formats in :mod:`viewfill.fileio`
store them as little-endian float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

UNIT_NORM_TOL = 1e-6
SCORE_SUM_TOL = 1e-5

# Label value reserved in score files for "ground truth unknown".
UNKNOWN_LABEL = 0xFFFF


class ViewfillError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVectorError(ViewfillError):
    """A vector with (near-)zero norm reached an operation that needs a direction."""


class DimensionMismatch(ViewfillError):
    """Vector or matrix dimensions do not agree."""


class FormatError(ViewfillError):
    """A binary file does not conform to its format.

    The byte offset at which parsing failed is carried in ``offset``.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MissingClassView(ViewfillError):
    """A class has no records in one of the views."""

    def __init__(self, label: int, view: int):
        super().__init__(f"class {label} has no records in view {view}")
        self.label = label
        self.view = view


class DegenerateBatch(ViewfillError):
    """A batch with fewer than two classes admits no triplets."""


class EmptyIndexError(ViewfillError):
    """A ranked query was issued against an index with no entries."""


class MissingScore(ViewfillError):
    """A retrieved sample has no classifier score vector."""

    def __init__(self, sample_id: str):
        super().__init__(f"no score vector for sample {sample_id!r}")
        self.sample_id = sample_id


class ClassTooSmall(ViewfillError):
    """A class has too few samples to stratify into 5 folds of 80/10/10."""

    def __init__(self, label: int, count: int, required: int):
        super().__init__(
            f"class {label} has {count} samples; at least {required} required"
        )
        self.label = label
        self.count = count


class LengthMismatch(ViewfillError):
    """Two sequences that must be parallel have different lengths."""


class AllZeroProduct(ViewfillError):
    """Every class was vetoed by a hard zero in one of the fused factors."""


class EmptyQuerySet(ViewfillError):
    """An aggregate metric was requested over zero queries."""


class CacheMismatch(ViewfillError):
    """A cached index was built with a different projection head."""


class ConfigError(ViewfillError):
    """Invalid run configuration (bad key, missing path, malformed value)."""


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    """Scale ``vector`` to unit Euclidean norm, preserving direction.

    Raises ZeroVectorError when the norm is below 1e-12; a zero feature
    vector is always an upstream bug and is never mapped to an arbitrary
    direction.
    """
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EmbeddingRecord:
    """One sample's feature vector with its id, class label, and view tag.

    View tags are small non-negative integers: 0 is the first view, 1 the
    second; higher tags are used by N-view datasets.
    """

    id: str
    label: int
    view: int
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise DimensionMismatch(
                f"record {self.id!r}: vector must be 1-D and non-empty, got shape {vec.shape}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"record {self.id!r}: vector has non-finite entries")
        if self.label < 0:
            raise ValueError(f"record {self.id!r}: negative class label {self.label}")
        if self.view < 0:
            raise ValueError(f"record {self.id!r}: negative view tag {self.view}")
        vec = vec.copy()
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class EmbeddingSet:
    """An immutable collection of embedding records with a shared dimension.

    ``normalized`` is computed from the records when omitted; passing it
    explicitly asserts that every vector is unit-norm within 1e-6.
    """

    dim: int
    n_views: int
    n_classes: int
    records: tuple[EmbeddingRecord, ...]
    normalized: Optional[bool] = None

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        seen: set[str] = set()
        all_unit = bool(records)
        for rec in records:
            if rec.dim != self.dim:
                raise DimensionMismatch(
                    f"record {rec.id!r} has dim {rec.dim}, set declares {self.dim}"
                )
            if rec.label >= self.n_classes:
                raise ValueError(
                    f"record {rec.id!r} has label {rec.label} >= n_classes {self.n_classes}"
                )
            if rec.view >= self.n_views:
                raise ValueError(
                    f"record {rec.id!r} has view {rec.view} >= n_views {self.n_views}"
                )
            if rec.id in seen:
                raise ValueError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if all_unit and abs(float(np.linalg.norm(rec.vector)) - 1.0) > UNIT_NORM_TOL:
                all_unit = False
        if self.normalized is None:
            object.__setattr__(self, "normalized", all_unit)
        elif self.normalized and not all_unit:
            raise ValueError("set declared normalized but contains non-unit vectors")

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> np.ndarray:
        """Stack record vectors into an (N, dim) float64 matrix."""
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([rec.vector for rec in self.records])

    def labels(self) -> np.ndarray:
        return np.array([rec.label for rec in self.records], dtype=np.int64)

    def ids(self) -> tuple[str, ...]:
        return tuple(rec.id for rec in self.records)

    def subset(self, ids: Iterable[str]) -> "EmbeddingSet":
        """Records whose id is in ``ids``, keeping this set's order."""
        wanted = set(ids)
        kept = tuple(rec for rec in self.records if rec.id in wanted)
        return EmbeddingSet(self.dim, self.n_views, self.n_classes, kept)


@dataclass(frozen=True)
class ScoreVector:
    """A per-view classifier's class-probability output for one sample.

    ``label`` is the optional ground truth; ``None`` means unknown.
    """

    id: str
    probs: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise DimensionMismatch(
                f"score {self.id!r}: probs must be 1-D with >= 2 classes, got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)):
            raise ValueError(f"score {self.id!r}: non-finite probabilities")
        if np.any(probs < -1e-9) or np.any(probs > 1.0 + 1e-9):
            raise ValueError(f"score {self.id!r}: probabilities outside [0, 1]")
        total = float(probs.sum())
        if abs(total - 1.0) > SCORE_SUM_TOL:
            raise ValueError(f"score {self.id!r}: probabilities sum to {total!r}, not 1")
        if self.label is not None and not (0 <= self.label < probs.size):
            raise ValueError(f"score {self.id!r}: label {self.label} out of range")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n_classes(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class ScoreSet:
    """An immutable collection of score vectors over a shared class count."""

    n_classes: int
    records: tuple[ScoreVector, ...]

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        lookup: dict[str, ScoreVector] = {}
        for rec in records:
            if rec.n_classes != self.n_classes:
                raise DimensionMismatch(
                    f"score {rec.id!r} has {rec.n_classes} classes, set declares {self.n_classes}"
                )
            if rec.id in lookup:
                raise ValueError(f"duplicate score id {rec.id!r}")
            lookup[rec.id] = rec
        object.__setattr__(self, "_lookup", lookup)

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self, sample_id: str) -> Optional[ScoreVector]:
        """The score vector for one sample, or None if absent."""
        return self._lookup.get(sample_id)

    def subset(self, ids: Iterable[str]) -> "ScoreSet":
        wanted = set(ids)
        return ScoreSet(self.n_classes, tuple(r for r in self.records if r.id in wanted))
