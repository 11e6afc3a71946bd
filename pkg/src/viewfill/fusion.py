"""Late fusion: synthesize the missing view's scores, then combine views.

The missing view never produces a feature or a classifier output at test
time. Instead, the query's available view retrieves its top-k cross-view
neighbors from the training gallery, and the mean of the neighbors'
classifier score vectors stands in for the missing view. The stand-in is
then product-fused with the available view's own scores. Retrieved
samples contribute only their score vectors, never their labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .core import (
    AllZeroProduct,
    DimensionMismatch,
    EmbeddingRecord,
    EmptyQuerySet,
    LengthMismatch,
    MissingScore,
    SCORE_SUM_TOL,
    ScoreSet,
    ScoreVector,
)
from .metric import ProjectionHead
from .retrieval import RetrievalIndex, Ranking, rank, top_k

PRODUCT_FLOOR = 1e-12

ScoreLike = Union[ScoreVector, np.ndarray, Sequence[float]]
ScoreLookup = Union[ScoreSet, Mapping[str, ScoreVector]]


def _as_prob_array(score: ScoreLike, position: int, normalized: bool) -> np.ndarray:
    probs = score.probs if isinstance(score, ScoreVector) else np.asarray(score, dtype=np.float64)
    if probs.ndim != 1 or probs.shape[0] < 2:
        raise DimensionMismatch(
            f"score vector {position} must be 1-D with >= 2 classes, got shape {probs.shape}"
        )
    if not np.all(np.isfinite(probs)):
        raise ValueError(f"score vector {position} has non-finite entries")
    if np.any(probs < -1e-9):
        raise ValueError(f"score vector {position} has negative entries")
    if normalized and abs(float(probs.sum()) - 1.0) > SCORE_SUM_TOL:
        raise ValueError(
            f"score vector {position} sums to {float(probs.sum())!r}, expected 1"
        )
    return np.clip(probs, 0.0, None)


def _collect(scores: Sequence[ScoreLike], normalized: bool) -> np.ndarray:
    if len(scores) == 0:
        raise ValueError("no score vectors to fuse")
    arrays = [_as_prob_array(s, i, normalized) for i, s in enumerate(scores)]
    n_classes = arrays[0].shape[0]
    for i, a in enumerate(arrays):
        if a.shape[0] != n_classes:
            raise LengthMismatch(
                f"score vector {i} has {a.shape[0]} classes, expected {n_classes}"
            )
    return np.stack(arrays)


def mean_fuse(scores: Sequence[ScoreLike]) -> np.ndarray:
    """Elementwise mean of score vectors; stays a valid distribution."""
    return _collect(scores, normalized=True).mean(axis=0)


def product_fuse(scores: Sequence[ScoreLike]) -> np.ndarray:
    """Elementwise product of score vectors, renormalized.

    Inputs may be unnormalized nonnegative score vectors; positive scaling
    of any factor cancels in the renormalization. Computed in the log
    domain with each entry floored at 1e-12 so long products of small
    scores cannot underflow. If every class receives an exact zero from at
    least one input, the true product is zero everywhere and no meaningful
    distribution exists.
    """
    stacked = _collect(scores, normalized=False)
    if np.any(stacked.sum(axis=1) == 0.0):
        raise AllZeroProduct("an input score vector is zero everywhere")
    if np.all(np.any(stacked == 0.0, axis=0)):
        raise AllZeroProduct("every class is zeroed by at least one score vector")
    log_prod = np.sum(np.log(np.maximum(stacked, PRODUCT_FLOOR)), axis=0)
    log_prod -= log_prod.max()
    fused = np.exp(log_prod)
    return fused / fused.sum()


@dataclass(frozen=True)
class FusionResult:
    """Everything the missing-view pipeline produced for one query.

    ``query_scores`` is the available view's own prediction,
    ``retrieved_scores`` the top-k mean standing in for the missing view.
    """

    query_id: str
    predicted_label: int
    fused_probs: np.ndarray
    query_scores: np.ndarray
    retrieved_scores: np.ndarray
    neighbor_ids: tuple[str, ...]
    neighbor_distances: np.ndarray

    def __post_init__(self):
        for name in ("fused_probs", "query_scores", "retrieved_scores", "neighbor_distances"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "neighbor_ids", tuple(self.neighbor_ids))
        if np.any(self.fused_probs < 0.0):
            raise ValueError("fused probabilities must be nonnegative")
        if self.predicted_label != int(np.argmax(self.fused_probs)):
            raise ValueError(
                f"predicted label {self.predicted_label} is not the fused argmax"
            )


def _lookup_score(scores: ScoreLookup, sample_id: str) -> ScoreVector:
    found = scores.by_id(sample_id) if isinstance(scores, ScoreSet) else scores.get(sample_id)
    if found is None:
        raise MissingScore(sample_id)
    return found


def classify_missing(
    query_scores: ScoreLike,
    query_id: str,
    ranking: Ranking,
    gallery_scores: ScoreLookup,
    k: int,
) -> FusionResult:
    """Fuse a query's own scores with the mean scores of its top-k neighbors.

    Equals product-fusing the query scores with the mean of the top-k
    retrieved samples' score vectors; ties in the final argmax resolve to
    the lowest class index.
    """
    neighbors = top_k(ranking, k)
    donors = [_lookup_score(gallery_scores, i) for i in neighbors.ids]
    synthesized = mean_fuse(donors)
    own = _as_prob_array(query_scores, 0, normalized=True)
    fused = product_fuse([own, synthesized])
    return FusionResult(
        query_id=query_id,
        predicted_label=int(np.argmax(fused)),
        fused_probs=fused,
        query_scores=own,
        retrieved_scores=synthesized,
        neighbor_ids=neighbors.ids,
        neighbor_distances=neighbors.distances,
    )


def classify_record(
    query_record: EmbeddingRecord,
    query_scores: ScoreVector,
    head: ProjectionHead,
    index: RetrievalIndex,
    gallery_scores: ScoreLookup,
    k: int,
) -> FusionResult:
    """End-to-end missing-view classification for one record.

    Projects the available-view embedding, ranks the missing-view gallery,
    and fuses as in classify_missing.
    """
    if query_record.view != head.view:
        raise ValueError(
            f"query record is view {query_record.view}, head projects view {head.view}"
        )
    if query_record.id != query_scores.id:
        raise ValueError(
            f"query record {query_record.id!r} paired with scores for {query_scores.id!r}"
        )
    ranking = rank(index, head.project(query_record.vector))
    return classify_missing(query_scores, query_record.id, ranking, gallery_scores, k)


def classify_set(
    queries: Sequence[EmbeddingRecord],
    query_scores: ScoreLookup,
    head: ProjectionHead,
    index: RetrievalIndex,
    gallery_scores: ScoreLookup,
    k: int,
) -> list[FusionResult]:
    """Run the missing-view pipeline over a whole query set, in input order."""
    queries = list(queries)
    if not queries:
        raise EmptyQuerySet("no query records")
    return [
        classify_record(
            record, _lookup_score(query_scores, record.id), head, index, gallery_scores, k
        )
        for record in queries
    ]


def write_fusion_results(results: Sequence[FusionResult], path: Union[str, Path]) -> None:
    """CSV of predictions with the full fused distribution per query."""
    results = list(results)
    if not results:
        raise EmptyQuerySet("no fusion results to write")
    n_classes = results[0].fused_probs.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query_id", "predicted_label"] + [f"p{c}" for c in range(n_classes)]
        )
        for r in results:
            writer.writerow(
                [r.query_id, r.predicted_label] + [repr(float(p)) for p in r.fused_probs]
            )
