"""Synthetic two-view dataset generator for desk-scale experiments.

Each class gets one unit-sphere center per view; the centers of the two
views share a latent direction, mixed in by the correlation parameter, so
cross-view structure exists for the metric learner to find. Per-view
"classifier" score files are simulated by a softmax over negative squared
distances to the true class centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingRecord, EmbeddingSet, ScoreSet, ScoreVector, l2_normalize


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator parameters.

    ``correlation`` is the weight of the shared latent direction in each
    view's class center (1 means both views' centers come from the same
    latent, 0 means independent centers). ``noise`` scales per-sample
    Gaussian noise so that its expected squared norm is noise**2
    regardless of dimension. ``temperature`` softens the simulated
    classifier scores.
    """

    classes: int = 8
    per_class: int = 50
    dim_view1: int = 32
    dim_view2: int = 32
    correlation: float = 0.9
    noise: float = 0.3
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.per_class < 4:
            raise ValueError(f"need at least 4 samples per class, got {self.per_class}")
        if self.dim_view1 < 2 or self.dim_view2 < 2:
            raise ValueError(
                f"view dims must be >= 2, got {self.dim_view1} and {self.dim_view2}"
            )
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError(f"correlation must lie in [0, 1], got {self.correlation}")
        if self.noise < 0.0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class SyntheticData:
    """Generated per-view embedding sets, score sets, and true centers."""

    view1: EmbeddingSet
    view2: EmbeddingSet
    scores_view1: ScoreSet
    scores_view2: ScoreSet
    centers_view1: np.ndarray
    centers_view2: np.ndarray


def _view_centers(
    latents: np.ndarray, dim: int, correlation: float, rng: np.random.Generator
) -> np.ndarray:
    own = rng.standard_normal((latents.shape[0], dim))
    mix = correlation * np.stack([l2_normalize(z[:dim]) for z in latents])
    mix = mix + math.sqrt(1.0 - correlation**2) * np.stack([l2_normalize(e) for e in own])
    return np.stack([l2_normalize(c) for c in mix])


def _score_probs(x: np.ndarray, centers: np.ndarray, temperature: float) -> np.ndarray:
    sq_dist = np.sum((centers - x[None, :]) ** 2, axis=1)
    logits = -sq_dist / temperature
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def generate_synthetic(config: SyntheticConfig) -> SyntheticData:
    """Draw the dataset; fully deterministic given config.seed.

    Sample ids are shared between the two views' sets, which is the
    pairing convention the evaluation harness expects. With noise 0 every
    sample equals its class center exactly.
    """
    rng = np.random.default_rng(config.seed)
    c, n = config.classes, config.per_class
    latent_dim = max(config.dim_view1, config.dim_view2)
    latents = rng.standard_normal((c, latent_dim))
    centers1 = _view_centers(latents, config.dim_view1, config.correlation, rng)
    centers2 = _view_centers(latents, config.dim_view2, config.correlation, rng)

    sets = []
    score_sets = []
    for view, dim, centers in ((0, config.dim_view1, centers1), (1, config.dim_view2, centers2)):
        noise = rng.standard_normal((c, n, dim)) * (config.noise / math.sqrt(dim))
        records = []
        scores = []
        for label in range(c):
            for i in range(n):
                x = centers[label] + noise[label, i]
                sample_id = f"c{label:03d}_s{i:04d}"
                records.append(EmbeddingRecord(sample_id, label, view, x))
                scores.append(
                    ScoreVector(
                        sample_id, _score_probs(x, centers, config.temperature), label
                    )
                )
        sets.append(EmbeddingSet(dim=dim, n_views=2, n_classes=c, records=tuple(records)))
        score_sets.append(ScoreSet(n_classes=c, records=tuple(scores)))

    return SyntheticData(
        view1=sets[0],
        view2=sets[1],
        scores_view1=score_sets[0],
        scores_view2=score_sets[1],
        centers_view1=centers1,
        centers_view2=centers2,
    )
