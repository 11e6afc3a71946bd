"""Experiment harness: stratified folds, retrieval and classification metrics.

A dataset here is a pair of per-view embedding files plus per-view
classifier score files; records of the same underlying sample carry the
same id in both views' files. Folds split sample ids 80/10/10 with
stratification by class, each experiment trains heads on the train split,
fills the missing view for val/test queries by retrieval against the
train gallery, and reports macro F1 and mAP@K across five folds.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    ClassTooSmall,
    EmbeddingSet,
    EmptyQuerySet,
    LengthMismatch,
    MissingScore,
    ScoreSet,
)
from .fusion import mean_fuse, product_fuse
from .metric import TrainConfig, train
from .retrieval import build_index, rank
from .stats import TTestResult, paired_t_test


@dataclass(frozen=True)
class FoldSplit:
    """One fold's disjoint train/val/test id sets (roughly 80/10/10)."""

    fold_index: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        groups = (set(self.train_ids), set(self.val_ids), set(self.test_ids))
        if groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2]:
            raise ValueError(f"fold {self.fold_index} has overlapping splits")


def make_folds(
    ids: Sequence[str], labels: Sequence[int], seed: int, n_folds: int = 5
) -> list[FoldSplit]:
    """Stratified cross-validation splits with disjoint test sets.

    Each class's ids are shuffled once and cut into 2*n_folds nearly equal
    slices; fold f tests on slice f and validates on slice n_folds+f. No id
    is ever tested twice, and every id lands in exactly one test-or-val
    slot across the folds. With five folds this is the 80/10/10 protocol.
    Classes need at least 2*n_folds samples.
    """
    ids = list(ids)
    labels = [int(x) for x in labels]
    if len(ids) != len(labels):
        raise LengthMismatch(f"{len(ids)} ids vs {len(labels)} labels")
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids")
    required = 2 * n_folds
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    for sample_id, label in zip(ids, labels):
        by_class.setdefault(label, []).append(sample_id)

    slices_by_class = {}
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < required:
            raise ClassTooSmall(label, len(members), required)
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        slices_by_class[label] = np.array_split(np.asarray(shuffled, dtype=object), required)

    folds = []
    for f in range(n_folds):
        train_ids: list[str] = []
        val_ids: list[str] = []
        test_ids: list[str] = []
        for label in sorted(slices_by_class):
            for s, chunk in enumerate(slices_by_class[label]):
                if s == f:
                    test_ids.extend(chunk)
                elif s == n_folds + f:
                    val_ids.extend(chunk)
                else:
                    train_ids.extend(chunk)
        folds.append(FoldSplit(f, tuple(train_ids), tuple(val_ids), tuple(test_ids)))
    return folds


def average_precision_at_k(relevance: Sequence[bool], k: int) -> float:
    """AP@k over a full ranking's relevance flags.

    Sum of precision@i at each relevant position i <= k, divided by
    min(k, total relevant anywhere in the list); 0 when nothing relevant
    exists. The denominator choice lets a perfect prefix score 1 even
    when the list holds more relevant items than k.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rel = np.asarray(relevance, dtype=bool)
    total_relevant = int(rel.sum())
    if total_relevant == 0:
        return 0.0
    prefix = rel[:k]
    hits = np.cumsum(prefix)
    precisions = hits[prefix] / (np.flatnonzero(prefix) + 1.0)
    return float(precisions.sum() / min(k, total_relevant))


def map_at_k(
    relevances: Sequence[Sequence[bool]], k: int
) -> float:
    """Mean AP@k over queries; each entry is one query's ranked relevance flags."""
    relevances = list(relevances)
    if not relevances:
        raise EmptyQuerySet("no queries for mAP")
    return float(np.mean([average_precision_at_k(r, k) for r in relevances]))


def _per_class_f1(predictions: np.ndarray, truths: np.ndarray, label: int) -> float:
    tp = int(np.sum((predictions == label) & (truths == label)))
    fp = int(np.sum((predictions == label) & (truths != label)))
    fn = int(np.sum((predictions != label) & (truths == label)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _check_label_arrays(predictions, truths) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise LengthMismatch(
            f"predictions shape {predictions.shape} vs truths shape {truths.shape}"
        )
    if predictions.size == 0:
        raise ValueError("no samples to score")
    return predictions, truths


def macro_f1(predictions: Sequence[int], truths: Sequence[int]) -> float:
    """Unweighted mean of per-class F1 over classes present in either input."""
    predictions, truths = _check_label_arrays(predictions, truths)
    classes = sorted(set(predictions.tolist()) | set(truths.tolist()))
    return float(np.mean([_per_class_f1(predictions, truths, c) for c in classes]))


def micro_f1(predictions: Sequence[int], truths: Sequence[int]) -> float:
    """Global-count F1; for single-label classification this is accuracy."""
    predictions, truths = _check_label_arrays(predictions, truths)
    return float(np.mean(predictions == truths))


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment specification for one dataset.

    ``k_list`` is the retrieval-depth sweep for both the mAP curve and the
    per-k fused F1 table. The headline F1 is reported at the k maximizing
    mean fused F1 on the validation splits. Per-fold training seeds are
    ``train.seed + fold_index``.
    """

    train: TrainConfig = field(default_factory=TrainConfig)
    k_list: tuple[int, ...] = (1, 2, 3, 4, 5, 10, 50, 100)
    n_folds: int = 5
    fold_seed: int = 0
    fully_paired: bool = True

    def __post_init__(self):
        k_list = tuple(int(k) for k in self.k_list)
        object.__setattr__(self, "k_list", k_list)
        if not k_list:
            raise ValueError("k_list is empty")
        if k_list[0] < 1 or any(b <= a for a, b in zip(k_list, k_list[1:])):
            raise ValueError(f"k_list must be strictly increasing and >= 1, got {k_list}")
        if self.n_folds < 2:
            raise ValueError(f"n_folds must be >= 2, got {self.n_folds}")


@dataclass(frozen=True)
class FoldResult:
    """Per-fold metrics: test mAP@K, fused F1 per k on val and test, baselines."""

    fold_index: int
    map_at_k: dict[int, float]
    fused_f1: dict[int, float]
    val_fused_f1: dict[int, float]
    no_fusion_f1: float
    fully_paired_f1: Optional[float]


def _check_view_pairing(avail_set: EmbeddingSet, miss_set: EmbeddingSet) -> None:
    avail_ids = set(avail_set.ids())
    miss_ids = set(miss_set.ids())
    if avail_ids != miss_ids:
        odd = sorted(avail_ids.symmetric_difference(miss_ids))[:5]
        raise ValueError(f"views do not cover the same sample ids; e.g. {odd}")
    views_a = {r.view for r in avail_set.records}
    views_m = {r.view for r in miss_set.records}
    if len(views_a) != 1 or len(views_m) != 1 or views_a == views_m:
        raise ValueError(
            f"expected two single-view sets with distinct views, got {views_a} and {views_m}"
        )


def run_fold(
    avail_set: EmbeddingSet,
    miss_set: EmbeddingSet,
    avail_scores: ScoreSet,
    miss_scores: ScoreSet,
    fold: FoldSplit,
    config: ExperimentConfig,
) -> FoldResult:
    """Train on the fold's train split and score its val and test queries.

    The gallery is always the train split of the missing view; queries are
    available-view records only. Each query is ranked once and the ranking
    prefix is reused across every k, which matches classifying it at each
    k independently.
    """
    _check_view_pairing(avail_set, miss_set)
    train_pair = [avail_set.subset(fold.train_ids), miss_set.subset(fold.train_ids)]
    fold_train = dataclasses.replace(config.train, seed=config.train.seed + fold.fold_index)
    trained = train(train_pair, fold_train)
    avail_view = train_pair[0].records[0].view
    miss_view = train_pair[1].records[0].view
    head_avail = trained.head_for(avail_view)
    index = build_index(train_pair[1], trained.head_for(miss_view))

    def gallery_score(sample_id: str) -> np.ndarray:
        vec = miss_scores.by_id(sample_id)
        if vec is None:
            raise MissingScore(sample_id)
        return vec.probs

    def query_rankings(ids: Sequence[str]):
        queries = avail_set.subset(ids)
        if not queries.records:
            raise EmptyQuerySet(f"fold {fold.fold_index} has an empty query split")
        rankings = [rank(index, head_avail.project(r.vector)) for r in queries.records]
        return queries, rankings

    def fused_predictions(queries, rankings, k: int) -> list[int]:
        preds = []
        for record, ranking in zip(queries.records, rankings):
            own = avail_scores.by_id(record.id)
            if own is None:
                raise MissingScore(record.id)
            depth = min(k, len(ranking))
            donors = [gallery_score(i) for i in ranking.ids[:depth]]
            fused = product_fuse([own.probs, mean_fuse(donors)])
            preds.append(int(np.argmax(fused)))
        return preds

    val_queries, val_rankings = query_rankings(fold.val_ids)
    test_queries, test_rankings = query_rankings(fold.test_ids)
    truths = [r.label for r in test_queries.records]

    relevances = [
        np.asarray(ranking.labels) == record.label
        for record, ranking in zip(test_queries.records, test_rankings)
    ]
    fold_map = {k: map_at_k(relevances, k) for k in config.k_list}

    fused = {
        k: macro_f1(fused_predictions(test_queries, test_rankings, k), truths)
        for k in config.k_list
    }
    val_truths = [r.label for r in val_queries.records]
    val_fused = {
        k: macro_f1(fused_predictions(val_queries, val_rankings, k), val_truths)
        for k in config.k_list
    }

    no_fusion_preds = []
    paired_preds: Optional[list[int]] = [] if config.fully_paired else None
    for record in test_queries.records:
        own = avail_scores.by_id(record.id)
        if own is None:
            raise MissingScore(record.id)
        no_fusion_preds.append(int(np.argmax(own.probs)))
        if paired_preds is not None:
            true_other = miss_scores.by_id(record.id)
            if true_other is None:
                paired_preds = None
            else:
                paired_preds.append(int(np.argmax(product_fuse([own.probs, true_other.probs]))))

    return FoldResult(
        fold_index=fold.fold_index,
        map_at_k=fold_map,
        fused_f1=fused,
        val_fused_f1=val_fused,
        no_fusion_f1=macro_f1(no_fusion_preds, truths),
        fully_paired_f1=macro_f1(paired_preds, truths) if paired_preds is not None else None,
    )


@dataclass(frozen=True)
class EvalReport:
    """Cross-fold summary; means and standard deviations are over folds.

    ``per_fold_f1`` is the fused missing-view F1 at ``k_star``, the sweep
    value with the best mean validation F1. Standard deviations use the
    population convention (ddof 0). ``ttest`` compares fused against the
    No-Fusion baseline fold by fold.
    """

    k_star: int
    per_fold_f1: tuple[float, ...]
    mean_f1: float
    std_f1: float
    map_at_k: dict[int, tuple[float, float]]
    per_fold_no_fusion: tuple[float, ...]
    mean_no_fusion: float
    per_fold_fully_paired: Optional[tuple[float, ...]]
    mean_fully_paired: Optional[float]
    per_k_f1: dict[int, tuple[float, ...]]
    ttest: Optional[TTestResult]
    folds: tuple[FoldResult, ...]

    def __post_init__(self):
        if abs(self.mean_f1 - float(np.mean(self.per_fold_f1))) > 1e-9:
            raise ValueError("mean_f1 inconsistent with per-fold values")
        if abs(self.std_f1 - float(np.std(self.per_fold_f1))) > 1e-9:
            raise ValueError("std_f1 inconsistent with per-fold values")


def _summarize(folds: Sequence[FoldResult], config: ExperimentConfig) -> EvalReport:
    val_means = {
        k: float(np.mean([f.val_fused_f1[k] for f in folds])) for k in config.k_list
    }
    k_star = max(config.k_list, key=lambda k: (val_means[k], -k))
    per_fold = tuple(f.fused_f1[k_star] for f in folds)
    no_fusion = tuple(f.no_fusion_f1 for f in folds)
    paired_vals = [f.fully_paired_f1 for f in folds]
    has_paired = all(v is not None for v in paired_vals)
    map_summary = {
        k: (
            float(np.mean([f.map_at_k[k] for f in folds])),
            float(np.std([f.map_at_k[k] for f in folds])),
        )
        for k in config.k_list
    }
    ttest = paired_t_test(per_fold, no_fusion) if len(folds) >= 2 else None
    return EvalReport(
        k_star=k_star,
        per_fold_f1=per_fold,
        mean_f1=float(np.mean(per_fold)),
        std_f1=float(np.std(per_fold)),
        map_at_k=map_summary,
        per_fold_no_fusion=no_fusion,
        mean_no_fusion=float(np.mean(no_fusion)),
        per_fold_fully_paired=tuple(paired_vals) if has_paired else None,
        mean_fully_paired=float(np.mean(paired_vals)) if has_paired else None,
        per_k_f1={k: tuple(f.fused_f1[k] for f in folds) for k in config.k_list},
        ttest=ttest,
        folds=tuple(folds),
    )


def _run_fold_task(args) -> FoldResult:
    return run_fold(*args)


def run_experiment(
    avail_set: EmbeddingSet,
    miss_set: EmbeddingSet,
    avail_scores: ScoreSet,
    miss_scores: ScoreSet,
    config: ExperimentConfig,
    jobs: int = 1,
) -> EvalReport:
    """Run all folds and reduce to a report; folds may run in parallel.

    Fold results are reduced in fold order regardless of completion order,
    so the report is identical for any ``jobs`` value.
    """
    _check_view_pairing(avail_set, miss_set)
    folds = make_folds(
        avail_set.ids(), avail_set.labels(), config.fold_seed, config.n_folds
    )
    tasks = [
        (avail_set, miss_set, avail_scores, miss_scores, fold, config) for fold in folds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_task, tasks))
    else:
        results = [_run_fold_task(t) for t in tasks]
    return _summarize(results, config)


def write_report_text(report: EvalReport, path: Union[str, Path]) -> None:
    lines = [
        f"folds: {len(report.per_fold_f1)}",
        f"selected k: {report.k_star}",
        "fused macro F1 per fold: " + ", ".join(repr(v) for v in report.per_fold_f1),
        f"fused macro F1 mean: {report.mean_f1!r} std: {report.std_f1!r}",
        "no-fusion macro F1 per fold: "
        + ", ".join(repr(v) for v in report.per_fold_no_fusion),
        f"no-fusion macro F1 mean: {report.mean_no_fusion!r}",
    ]
    if report.per_fold_fully_paired is not None:
        lines.append(
            "fully-paired macro F1 per fold: "
            + ", ".join(repr(v) for v in report.per_fold_fully_paired)
        )
        lines.append(f"fully-paired macro F1 mean: {report.mean_fully_paired!r}")
    lines.append("mAP@K (mean, std):")
    for k, (mean, std) in sorted(report.map_at_k.items()):
        lines.append(f"  K={k}: {mean!r} {std!r}")
    lines.append("fused macro F1 per k:")
    for k, vals in sorted(report.per_k_f1.items()):
        lines.append(f"  k={k}: " + ", ".join(repr(v) for v in vals))
    if report.ttest is not None:
        t = report.ttest
        lines.append(
            f"paired t-test fused vs no-fusion: t={t.t!r} p={t.p!r} "
            f"significant={t.significant} zero_variance={t.zero_variance}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_report_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """Long-form report rows: fold, metric, value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "metric", "value"])
        for i, v in enumerate(report.per_fold_f1):
            writer.writerow([i, "fused_macro_f1", repr(v)])
        for i, v in enumerate(report.per_fold_no_fusion):
            writer.writerow([i, "no_fusion_macro_f1", repr(v)])
        if report.per_fold_fully_paired is not None:
            for i, v in enumerate(report.per_fold_fully_paired):
                writer.writerow([i, "fully_paired_macro_f1", repr(v)])
        writer.writerow(["all", "k_star", report.k_star])
        writer.writerow(["all", "fused_macro_f1_mean", repr(report.mean_f1)])
        writer.writerow(["all", "fused_macro_f1_std", repr(report.std_f1)])
        writer.writerow(["all", "no_fusion_macro_f1_mean", repr(report.mean_no_fusion)])
        if report.mean_fully_paired is not None:
            writer.writerow(["all", "fully_paired_macro_f1_mean", repr(report.mean_fully_paired)])
        if report.ttest is not None:
            writer.writerow(["all", "ttest_t", repr(report.ttest.t)])
            writer.writerow(["all", "ttest_p", repr(report.ttest.p)])
            writer.writerow(["all", "ttest_significant", int(report.ttest.significant)])


def write_map_curve_csv(report: EvalReport, path: Union[str, Path]) -> None:
    """mAP curve rows (k, mean, std) for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mean", "std"])
        for k, (mean, std) in sorted(report.map_at_k.items()):
            writer.writerow([k, repr(mean), repr(std)])
