"""Rubric-aware concept encoder: query bank, attention pooling, ordinal heads.

Each of the K rubric concepts owns a learnable query vector. Token states are
pooled per concept with temperature-softmax attention, classified into ordinal
levels 0..M by a per-concept affine head, and summarized by the expected
level. All gradients are computed analytically in closed form (reverse mode,
float64); there is no autodiff framework underneath.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConceptQueryBank:
    """K attention queries (rows) plus the softmax temperature."""

    queries: np.ndarray  # (K, d)
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")

    @property
    def num_concepts(self) -> int:
        return self.queries.shape[0]

    @property
    def d(self) -> int:
        return self.queries.shape[1]

    def copy(self) -> "ConceptQueryBank":
        return ConceptQueryBank(self.queries.copy(), self.tau)


@dataclass
class ConceptClassifiers:
    """Per-concept affine heads over pooled states: (M+1) logits each."""

    weights: np.ndarray  # (K, M+1, d)
    biases: np.ndarray  # (K, M+1)

    @classmethod
    def zeros(cls, K: int, M: int, d: int) -> "ConceptClassifiers":
        # Last-layer zero init: first step's gradients already flow through h_k.
        return cls(np.zeros((K, M + 1, d)), np.zeros((K, M + 1)))

    @property
    def num_levels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ConceptClassifiers":
        return ConceptClassifiers(self.weights.copy(), self.biases.copy())


@dataclass
class ConceptForward:
    """Everything one forward pass produces for one instance."""

    H: np.ndarray  # (T, d) input token states
    attention: np.ndarray  # (K, T), rows on the simplex
    pooled: np.ndarray  # (K, d)
    dists: np.ndarray  # (K, M+1), rows sum to 1
    expected: np.ndarray  # (K,), in [0, M]
    argmax_levels: np.ndarray  # (K,) ints, ties -> lowest level


@dataclass
class Stage1Grads:
    """Gradients of a Stage-I objective w.r.t. all Stage-I parameters."""

    queries: np.ndarray  # (K, d)
    clf_weights: np.ndarray  # (K, M+1, d)
    clf_biases: np.ndarray  # (K, M+1)
    embeddings: np.ndarray  # (T, d): gradient w.r.t. the token states


def init_query_bank(K: int, d: int, tau: float, seed: int) -> ConceptQueryBank:
    """Orthonormal queries from the QR factorization of a seeded Gaussian draw.

    Column signs are fixed so the first nonzero entry of each column is
    positive, making the factorization (and hence training) reproducible.
    """
    if not 1 <= K <= d:
        raise ValueError(f"need 1 <= K <= d, got K={K}, d={d}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    gauss = rng.standard_normal((d, K))
    q, _ = np.linalg.qr(gauss)
    for j in range(K):
        col = q[:, j]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            q[:, j] = -col
    return ConceptQueryBank(queries=q.T.copy(), tau=float(tau))


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def forward_concepts_batch(
    H: np.ndarray,
    mask: np.ndarray,
    bank: ConceptQueryBank,
    clf: ConceptClassifiers,
) -> dict:
    """Vectorized forward over a padded batch.

    H is (B, T, d); mask is (B, T) with True at real tokens. Returns a cache
    dict consumed by backward_concepts_batch.
    """
    att_logits = np.einsum("kd,btd->bkt", bank.queries, H) / bank.tau
    att_logits = np.where(mask[:, None, :], att_logits, -np.inf)
    alpha = _softmax(att_logits, axis=2)
    pooled = np.einsum("bkt,btd->bkd", alpha, H)
    cls_logits = np.einsum("kmd,bkd->bkm", clf.weights, pooled) + clf.biases[None]
    dists = _softmax(cls_logits, axis=2)
    levels = np.arange(clf.num_levels, dtype=np.float64)
    expected = dists @ levels
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(dists))):
        raise FloatingPointError("non-finite values in concept forward pass")
    return {
        "alpha": alpha,
        "pooled": pooled,
        "dists": dists,
        "expected": expected,
    }


def backward_concepts_batch(
    cache: dict,
    H: np.ndarray,
    bank: ConceptQueryBank,
    clf: ConceptClassifiers,
    d_cls_logits: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reverse pass from classifier-logit gradients (B, K, M+1).

    Returns (d_queries, d_clf_weights, d_clf_biases, d_H); padded positions of
    d_H are exactly zero because their attention weights are zero.
    """
    alpha, pooled = cache["alpha"], cache["pooled"]
    d_clf_w = np.einsum("bkm,bkd->kmd", d_cls_logits, pooled)
    d_clf_b = d_cls_logits.sum(axis=0)
    d_pooled = np.einsum("kmd,bkm->bkd", clf.weights, d_cls_logits)
    d_alpha = np.einsum("bkd,btd->bkt", d_pooled, H)
    # softmax backward on the attention rows
    inner = np.sum(alpha * d_alpha, axis=2, keepdims=True)
    d_att_logits = alpha * (d_alpha - inner)
    d_queries = np.einsum("bkt,btd->kd", d_att_logits, H) / bank.tau
    d_H = (
        np.einsum("bkt,bkd->btd", alpha, d_pooled)
        + np.einsum("bkt,kd->btd", d_att_logits, bank.queries) / bank.tau
    )
    return d_queries, d_clf_w, d_clf_b, d_H


def concept_nll_batch(
    dists: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean-over-batch concept cross-entropy and its classifier-logit gradient.

    Per instance the loss is the sum over concepts of -log p(level); the batch
    value is the mean over instances. Probabilities are floored at 1e-12.
    """
    B, K, _ = dists.shape
    picked = np.take_along_axis(dists, labels[:, :, None], axis=2)[:, :, 0]
    loss = float(-np.log(np.maximum(picked, 1e-12)).sum() / B)
    onehot = np.zeros_like(dists)
    np.put_along_axis(onehot, labels[:, :, None], 1.0, axis=2)
    d_cls_logits = (dists - onehot) / B
    return loss, d_cls_logits


def score_grad_to_logits(
    dists: np.ndarray, expected: np.ndarray, d_scores: np.ndarray
) -> np.ndarray:
    """Chain a gradient w.r.t. expected scores back to classifier logits.

    d expected / d logit_m = p_m * (m - expected), so each (b, k) row of the
    result is d_scores[b, k] * p * (levels - expected[b, k]).
    """
    levels = np.arange(dists.shape[-1], dtype=np.float64)
    return d_scores[..., None] * dists * (levels[None, None, :] - expected[..., None])


def forward_concepts(
    H: np.ndarray, bank: ConceptQueryBank, clf: ConceptClassifiers
) -> ConceptForward:
    """Single-instance forward: attention, pooled states, level distributions."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != bank.d:
        raise ValueError(f"H must be (T, {bank.d}), got {H.shape}")
    cache = forward_concepts_batch(
        H[None], np.ones((1, H.shape[0]), dtype=bool), bank, clf
    )
    dists = cache["dists"][0]
    return ConceptForward(
        H=H,
        attention=cache["alpha"][0],
        pooled=cache["pooled"][0],
        dists=dists,
        expected=cache["expected"][0],
        argmax_levels=np.argmax(dists, axis=1),
    )


def concept_loss(
    fwd: ConceptForward,
    labels,
    bank: ConceptQueryBank,
    clf: ConceptClassifiers,
) -> tuple[float, Stage1Grads]:
    """Sum of per-concept cross-entropies for one instance, with gradients."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= clf.num_levels):
        raise ValueError("concept labels outside the rubric's level range")
    loss, d_cls = concept_nll_batch(fwd.dists[None], labels[None])
    d_q, d_w, d_b, d_H = backward_concepts_batch(
        {"alpha": fwd.attention[None], "pooled": fwd.pooled[None]},
        fwd.H[None],
        bank,
        clf,
        d_cls,
    )
    return loss, Stage1Grads(d_q, d_w, d_b, d_H[0])
