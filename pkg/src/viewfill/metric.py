"""Two-stream metric learning with the weighted soft-margin triplet loss.

Each view has its own linear projection head followed by L2 normalization.
A batch holds exactly one cross-view pair per class; every other class in
the batch serves as a negative (exhaustive mini-batch mining), and each
pair is optimized in both anchor directions, giving 2*C*(C-1) triplets
per batch. Gradients are analytic; the optimizer is Adam.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .core import (
    DegenerateBatch,
    DimensionMismatch,
    EmbeddingRecord,
    EmbeddingSet,
    FormatError,
    MissingClassView,
    ZeroVectorError,
    l2_normalize,
)
from .fileio import ByteReader, FORMAT_VERSION

MAGIC_HEAD = b"MVPH"

ADAM_EPSILON = 1e-8


@dataclass(frozen=True)
class ProjectionHead:
    """Linear map plus L2 normalization producing one view's metric space.

    ``weights`` has shape (d_in, d_out); a record vector x maps to
    l2_normalize(x @ weights).
    """

    weights: np.ndarray
    view: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.size == 0:
            raise DimensionMismatch(f"weights must be a 2-D matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("projection weights contain non-finite entries")
        if self.view < 0:
            raise ValueError(f"negative view tag {self.view}")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def d_in(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.weights.shape[1])

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project one raw feature vector to the unit sphere."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d_in,):
            raise DimensionMismatch(
                f"head for view {self.view} expects dim {self.d_in}, got shape {x.shape}"
            )
        return l2_normalize(x @ self.weights)

    def project_matrix(self, x: np.ndarray) -> np.ndarray:
        """Project rows of an (N, d_in) matrix; every output row is unit-norm."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionMismatch(
                f"head for view {self.view} expects (N, {self.d_in}), got shape {x.shape}"
            )
        z = x @ self.weights
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms < 1e-12):
            bad = int(np.argmin(norms))
            raise ZeroVectorError(f"projection of row {bad} has near-zero norm")
        return z / norms[:, None]


def apply_head(head: ProjectionHead, record: EmbeddingRecord) -> np.ndarray:
    """Project a record through its view's head onto the unit sphere."""
    return head.project(record.vector)


@dataclass(frozen=True)
class TripletBatch:
    """One cross-view (anchor, positive) pair per class.

    All anchors come from one view and all positives from the other; both
    members of a pair carry the same class label, and labels are distinct
    across pairs.
    """

    pairs: tuple[tuple[EmbeddingRecord, EmbeddingRecord], ...]

    def __post_init__(self):
        pairs = tuple(tuple(p) for p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise DegenerateBatch("batch has no pairs")
        labels = set()
        anchor_view = pairs[0][0].view
        positive_view = pairs[0][1].view
        for anchor, positive in pairs:
            if anchor.label != positive.label:
                raise ValueError(
                    f"pair ({anchor.id!r}, {positive.id!r}) mixes labels "
                    f"{anchor.label} and {positive.label}"
                )
            if anchor.view == positive.view:
                raise ValueError(
                    f"pair ({anchor.id!r}, {positive.id!r}) stays within view {anchor.view}"
                )
            if anchor.view != anchor_view or positive.view != positive_view:
                raise ValueError("all pairs must share the same view orientation")
            if anchor.label in labels:
                raise ValueError(f"duplicate class {anchor.label} in batch")
            labels.add(anchor.label)

    @property
    def n_classes(self) -> int:
        return len(self.pairs)

    @property
    def anchor_view(self) -> int:
        return self.pairs[0][0].view

    @property
    def positive_view(self) -> int:
        return self.pairs[0][1].view


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    Defaults follow the reference protocol: 200 epochs, gamma 10, Adam with
    learning rate 1e-5 and exponential decays 0.9 / 0.999, batch size equal
    to the class count. ``batch_per_epoch`` 0 means ceil(n_samples / C) so
    one epoch sees roughly the whole training set; ``embed_dim`` is the
    output dimension of both projection heads.
    """

    epochs: int = 200
    gamma: float = 10.0
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    batch_per_epoch: int = 0
    embed_dim: int = 128

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name, beta in (("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)):
            if not 0.0 < beta < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {beta}")
        if self.batch_per_epoch < 0:
            raise ValueError(f"batch_per_epoch must be >= 0, got {self.batch_per_epoch}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")


def distance_matrix(f_a: np.ndarray, f_b: np.ndarray) -> np.ndarray:
    """Pairwise distances 2 * (1 - f_a[i] . f_b[j]) between two unit-vector stacks.

    For unit-norm inputs this equals the squared Euclidean distance
    ||f_a[i] - f_b[j]||^2, so every entry lies in [0, 4]; entries are
    clamped to that interval to absorb rounding at the boundaries.
    """
    f_a = np.atleast_2d(np.asarray(f_a, dtype=np.float64))
    f_b = np.atleast_2d(np.asarray(f_b, dtype=np.float64))
    if f_a.shape[1] != f_b.shape[1]:
        raise DimensionMismatch(
            f"embedding dims differ: {f_a.shape[1]} vs {f_b.shape[1]}"
        )
    alpha = 2.0 * (1.0 - f_a @ f_b.T)
    return np.clip(alpha, 0.0, 4.0)


def _check_square_alpha(alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1]:
        raise DimensionMismatch(f"distance matrix must be square, got shape {alpha.shape}")
    if alpha.shape[0] < 2:
        raise DegenerateBatch(f"need at least 2 classes for triplets, got {alpha.shape[0]}")
    return alpha


def triplet_loss(alpha: np.ndarray, gamma: float) -> float:
    """Weighted soft-margin triplet loss over an exhaustively mined batch.

    Averages ln(1 + exp(gamma * (d_ap - d_an))) over all 2*C*(C-1) ordered
    triplets: for each class i, d_ap = alpha[i][i] and d_an ranges over the
    off-diagonal of row i (one anchor direction) and of column i (the
    other direction).
    """
    alpha = _check_square_alpha(alpha)
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    c = alpha.shape[0]
    d_ap = np.diag(alpha)
    off = ~np.eye(c, dtype=bool)
    row_terms = np.logaddexp(0.0, gamma * (d_ap[:, None] - alpha))[off]
    col_terms = np.logaddexp(0.0, gamma * (d_ap[None, :] - alpha))[off]
    return float((row_terms.sum() + col_terms.sum()) / (2 * c * (c - 1)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _loss_and_feature_grads(
    f_a: np.ndarray, f_b: np.ndarray, gamma: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus its gradients w.r.t. the two unit-feature stacks."""
    c = f_a.shape[0]
    if c < 2:
        raise DegenerateBatch(f"need at least 2 classes for triplets, got {c}")
    alpha = 2.0 * (1.0 - f_a @ f_b.T)
    d_ap = np.diag(alpha)
    off = ~np.eye(c, dtype=bool)
    n_triplets = 2 * c * (c - 1)

    row_args = gamma * (d_ap[:, None] - alpha)
    col_args = gamma * (d_ap[None, :] - alpha)
    loss = float(
        (np.logaddexp(0.0, row_args)[off].sum() + np.logaddexp(0.0, col_args)[off].sum())
        / n_triplets
    )

    # dL/d(alpha): off-diagonal entries only push their own triplet's
    # negative distance; the diagonal collects every triplet that uses
    # class i as its positive pair, in both anchor directions.
    p = _sigmoid(row_args)
    p[np.diag_indices(c)] = 0.0
    q = _sigmoid(col_args)
    q[np.diag_indices(c)] = 0.0
    # col_args[u][v] differentiates w.r.t. alpha[u][v] directly and w.r.t.
    # the positive distance alpha[v][v], hence column sums on the diagonal.
    g_alpha = -(p + q)
    g_alpha[np.diag_indices(c)] = p.sum(axis=1) + q.sum(axis=0)
    g_alpha *= gamma / n_triplets

    # alpha[i][j] = 2 - 2 * f_a[i] . f_b[j]
    g_fa = -2.0 * (g_alpha @ f_b)
    g_fb = -2.0 * (g_alpha.T @ f_a)
    return loss, g_fa, g_fb


def _normalization_backprop(
    x: np.ndarray, weights: np.ndarray, g_f: np.ndarray
) -> np.ndarray:
    """Chain dL/dF back through rowwise L2 normalization and the linear map."""
    z = x @ weights
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-12):
        raise ZeroVectorError("projection collapsed to a zero vector during gradient")
    f = z / norms[:, None]
    # Jacobian of f = z/||z|| is (I - f f^T) / ||z||, applied row by row.
    g_z = (g_f - (np.sum(g_f * f, axis=1, keepdims=True)) * f) / norms[:, None]
    return x.T @ g_z


@dataclass(frozen=True)
class GradientResult:
    loss: float
    grads: tuple[np.ndarray, np.ndarray]


def loss_gradient(
    batch: TripletBatch, heads: Sequence[ProjectionHead], gamma: float
) -> GradientResult:
    """Analytic gradient of the batch triplet loss w.r.t. both weight matrices.

    ``heads`` must contain one head per view in the batch; gradients are
    returned in the same order as the heads were passed.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if len(heads) != 2:
        raise ValueError(f"expected exactly 2 heads, got {len(heads)}")
    by_view = {head.view: head for head in heads}
    if batch.anchor_view not in by_view or batch.positive_view not in by_view:
        raise ValueError(
            f"heads cover views {sorted(by_view)}, batch uses "
            f"{batch.anchor_view} and {batch.positive_view}"
        )
    head_a = by_view[batch.anchor_view]
    head_b = by_view[batch.positive_view]
    x_a = np.stack([anchor.vector for anchor, _ in batch.pairs])
    x_b = np.stack([positive.vector for _, positive in batch.pairs])
    f_a = head_a.project_matrix(x_a)
    f_b = head_b.project_matrix(x_b)

    loss, g_fa, g_fb = _loss_and_feature_grads(f_a, f_b, gamma)
    g_wa = _normalization_backprop(x_a, head_a.weights, g_fa)
    g_wb = _normalization_backprop(x_b, head_b.weights, g_fb)
    grad_by_view = {head_a.view: g_wa, head_b.view: g_wb}
    return GradientResult(loss, tuple(grad_by_view[h.view] for h in heads))


def _group_by_class_and_view(
    train_set: Union[EmbeddingSet, Sequence[EmbeddingSet]],
) -> tuple[int, tuple[int, int], dict[tuple[int, int], list[EmbeddingRecord]], dict[int, int]]:
    """Split records by (label, view); training needs exactly two views."""
    sets = [train_set] if isinstance(train_set, EmbeddingSet) else list(train_set)
    if not sets:
        raise ValueError("no embedding sets given")
    n_classes = sets[0].n_classes
    for s in sets:
        if s.n_classes != n_classes:
            raise ValueError(f"class counts differ across sets: {s.n_classes} vs {n_classes}")
    groups: dict[tuple[int, int], list[EmbeddingRecord]] = {}
    dims: dict[int, int] = {}
    for s in sets:
        for rec in s.records:
            groups.setdefault((rec.label, rec.view), []).append(rec)
            prev = dims.setdefault(rec.view, rec.dim)
            if prev != rec.dim:
                raise DimensionMismatch(
                    f"view {rec.view} mixes dims {prev} and {rec.dim}"
                )
    views = sorted(dims)
    if len(views) != 2:
        raise ValueError(f"training needs exactly 2 views, found {views}")
    return n_classes, (views[0], views[1]), groups, dims


def _draw_batch(
    n_classes: int,
    views: tuple[int, int],
    groups: dict[tuple[int, int], list[EmbeddingRecord]],
    rng: np.random.Generator,
) -> TripletBatch:
    view_a, view_b = views
    pairs = []
    for label in range(n_classes):
        chosen = []
        for view in (view_a, view_b):
            candidates = groups.get((label, view))
            if not candidates:
                raise MissingClassView(label, view)
            chosen.append(candidates[int(rng.integers(len(candidates)))])
        pairs.append((chosen[0], chosen[1]))
    return TripletBatch(tuple(pairs))


def sample_batch(
    train_set: Union[EmbeddingSet, Sequence[EmbeddingSet]], rng: np.random.Generator
) -> TripletBatch:
    """Draw one random cross-view pair per class, uniformly and independently.

    The two members of a pair need not be each other's true counterpart;
    any same-class records from the two views may be matched.
    """
    n_classes, views, groups, _ = _group_by_class_and_view(train_set)
    return _draw_batch(n_classes, views, groups, rng)


class _Adam:
    """Plain Adam with bias correction; state per weight matrix."""

    def __init__(self, shape: tuple[int, int], lr: float, beta1: float, beta2: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, weights: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return weights - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)


@dataclass(frozen=True)
class TrainResult:
    """Trained heads ordered by view tag, plus the per-epoch mean batch loss."""

    heads: tuple[ProjectionHead, ProjectionHead]
    trace: tuple[float, ...]

    def head_for(self, view: int) -> ProjectionHead:
        for head in self.heads:
            if head.view == view:
                return head
        raise ValueError(f"no head for view {view}")


def train(
    train_set: Union[EmbeddingSet, Sequence[EmbeddingSet]], config: TrainConfig
) -> TrainResult:
    """Train both projection heads; fully deterministic given config.seed.

    Head weights initialize uniformly in +/- 1/sqrt(d_in). Every batch
    holds one random cross-view pair per class; Adam updates follow each
    batch. The trace records the mean batch loss of each epoch.
    """
    n_classes, views, groups, dims = _group_by_class_and_view(train_set)
    if n_classes < 2:
        raise DegenerateBatch(f"need at least 2 classes to train, got {n_classes}")
    rng = np.random.default_rng(config.seed)
    weights = {}
    for view in views:
        d_in = dims[view]
        bound = 1.0 / math.sqrt(d_in)
        weights[view] = rng.uniform(-bound, bound, size=(d_in, config.embed_dim))

    n_samples = max(
        sum(len(recs) for (label, v), recs in groups.items() if v == view)
        for view in views
    )
    batches = config.batch_per_epoch or math.ceil(n_samples / n_classes)
    optimizers = {
        view: _Adam(weights[view].shape, config.learning_rate, config.adam_beta1, config.adam_beta2)
        for view in views
    }

    trace = []
    for _ in range(config.epochs):
        epoch_losses = np.empty(batches)
        for b in range(batches):
            batch = _draw_batch(n_classes, views, groups, rng)
            heads = tuple(ProjectionHead(weights[v], v) for v in views)
            result = loss_gradient(batch, heads, config.gamma)
            epoch_losses[b] = result.loss
            for view, grad in zip(views, result.grads):
                weights[view] = optimizers[view].step(weights[view], grad)
        trace.append(float(epoch_losses.mean()))

    heads = tuple(ProjectionHead(weights[v], v) for v in views)
    return TrainResult(heads, tuple(trace))


def fuse_available_views(features: Sequence[np.ndarray]) -> np.ndarray:
    """Average the available views' unit features and renormalize.

    With a single view this is the identity. Exactly antipodal features
    average to zero and raise ZeroVectorError.
    """
    if len(features) == 0:
        raise ValueError("no view features to fuse")
    stacked = [np.asarray(f, dtype=np.float64) for f in features]
    dim = stacked[0].shape
    for f in stacked[1:]:
        if f.shape != dim:
            raise DimensionMismatch(f"view feature shapes differ: {dim} vs {f.shape}")
    return l2_normalize(np.mean(stacked, axis=0))


def serialize_head(head: ProjectionHead) -> bytes:
    """Checkpoint bytes: magic, version, d_in, d_out, view, f32 row-major weights."""
    header = struct.pack("<HIIH", FORMAT_VERSION, head.d_in, head.d_out, head.view)
    body = np.asarray(head.weights, dtype="<f4").tobytes()
    return MAGIC_HEAD + header + body


def save_head(head: ProjectionHead, path: Union[str, Path]) -> None:
    Path(path).write_bytes(serialize_head(head))


def load_head(path: Union[str, Path]) -> ProjectionHead:
    reader = ByteReader(Path(path).read_bytes())
    reader.magic(MAGIC_HEAD)
    version = reader.u16("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    d_in = reader.u32("input dim")
    d_out = reader.u32("output dim")
    view = reader.u16("view")
    if d_in == 0 or d_out == 0:
        raise FormatError("zero checkpoint dimension", offset=6)
    flat = reader.f32_vector(d_in * d_out, "weights")
    reader.expect_eof()
    return ProjectionHead(flat.reshape(d_in, d_out), view)


def write_loss_trace(trace: Sequence[float], path: Union[str, Path]) -> None:
    """Loss trace as CSV with 1-based epoch numbers."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(trace, start=1):
            writer.writerow([epoch, repr(float(loss))])
