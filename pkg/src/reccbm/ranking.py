"""Ordinal pairwise calibration over expected concept scores.

Within a batch, every ordered pair of instances whose rubric labels strictly
disagree on a concept becomes a comparison; a logistic (Bradley-Terry style)
loss pushes the expected scores to respect the annotated ordering. Ties never
generate pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PairSet:
    """Per concept, the ordered index pairs (i, j) with label_i > label_j."""

    pairs: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def num_concepts(self) -> int:
        return len(self.pairs)

    @property
    def active_concepts(self) -> int:
        return sum(1 for p in self.pairs if p)

    def total_pairs(self) -> int:
        return sum(len(p) for p in self.pairs)


def build_pairs(batch_labels: np.ndarray) -> PairSet:
    """Enumerate all strict comparison pairs per concept, i then j ascending."""
    labels = np.asarray(batch_labels)
    if labels.ndim != 2:
        raise ValueError(f"batch labels must be (B, K), got {labels.shape}")
    B, K = labels.shape
    per_concept = []
    for k in range(K):
        col = labels[:, k]
        pairs = tuple(
            (i, j) for i in range(B) for j in range(B) if col[i] > col[j]
        )
        per_concept.append(pairs)
    return PairSet(pairs=tuple(per_concept))


def ranking_loss(
    batch_scores: np.ndarray, pairs: PairSet
) -> tuple[float, np.ndarray]:
    """Logistic ranking loss over the pair set, with gradients w.r.t. scores.

    Per concept: mean over pairs of -log sigmoid(score_i - score_j); overall:
    mean over concepts that have at least one pair. Returns 0 with zero
    gradients when no concept has a pair.
    """
    scores = np.asarray(batch_scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    d_scores = np.zeros_like(scores)
    k_active = pairs.active_concepts
    if k_active == 0:
        return 0.0, d_scores
    total = 0.0
    for k, concept_pairs in enumerate(pairs.pairs):
        if not concept_pairs:
            continue
        idx = np.asarray(concept_pairs, dtype=np.int64)
        margins = scores[idx[:, 0], k] - scores[idx[:, 1], k]
        # -log sigmoid(m) == softplus(-m), computed stably
        total += float(np.mean(np.logaddexp(0.0, -margins)))
        # d/dm of softplus(-m) is -sigmoid(-m)
        coeff = -_sigmoid(-margins) / (len(concept_pairs) * k_active)
        np.add.at(d_scores[:, k], idx[:, 0], coeff)
        np.add.at(d_scores[:, k], idx[:, 1], -coeff)
    return total / k_active, d_scores


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
