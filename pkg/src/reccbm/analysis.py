"""Intervention harness, decision traces, and the denoising report.

All operations read a frozen trained model. Interventions overwrite entries of
the normalized score vector fed to the latent head and re-run only the grade
readout, which is exactly what an educator override does in the UI.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reccbm.data import GradingInstance
from reccbm.latent import partial_correlations, posterior_operator
from reccbm.trainer import Metrics, TrainedModel, macro_f1, predict_split

POLICY_KINDS = ("oracle", "wrong", "random", "none")


@dataclass(frozen=True)
class InterventionPolicy:
    """What to substitute (oracle/wrong/random/none) and on how many concepts.

    wrong_rule picks the adversarial substitution: "farthest" (default) uses
    the level farthest from the annotation; "grade_min" greedily picks, per
    concept in confidence order, the level that most reduces the model's
    probability of the true grade.
    """

    kind: str
    k: int
    seed: int = 0
    wrong_rule: str = "farthest"

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.wrong_rule not in ("farthest", "grade_min"):
            raise ValueError(f"unknown wrong rule {self.wrong_rule!r}")


@dataclass(frozen=True)
class InterventionResult:
    """Metrics at the requested k plus the whole accuracy curve over k=0..K."""

    policy: InterventionPolicy
    metrics: Metrics
    curve: tuple[tuple[int, float], ...]  # (k, task accuracy)

    def curve_dict(self) -> dict:
        return {str(k): acc for k, acc in self.curve}


def wrong_level(label: int, max_level: int) -> int:
    """Most damaging substitution: the level farthest from the annotation.

    Ties break toward the lower level, so e.g. label 1 on a 0..2 scale maps
    to 0.
    """
    distances = np.abs(np.arange(max_level + 1) - label)
    return int(np.argmax(distances))


def _confidence_order(confidence: np.ndarray) -> np.ndarray:
    """Concepts ranked by descending confidence; ties go to the lower index."""
    K = confidence.shape[-1]
    return np.lexsort((np.arange(K), -confidence))


def _substituted_scores(
    s_tilde: np.ndarray,
    confidence: np.ndarray,
    levels: np.ndarray | None,
    k: int,
    max_level: int,
) -> np.ndarray:
    """Overwrite the top-k most confident concepts with the given levels."""
    out = s_tilde.copy()
    if levels is None or k == 0:
        return out
    for i in range(s_tilde.shape[0]):
        order = _confidence_order(confidence[i])
        for concept in order[:k]:
            out[i, concept] = levels[i, concept] / max_level
    return out


def _grade_min_substitutions(
    s_tilde: np.ndarray,
    confidence: np.ndarray,
    grades: np.ndarray,
    model: TrainedModel,
    op,
) -> np.ndarray:
    """Adversarial levels under the grade_min rule, greedy in confidence order.

    For each instance the full K-length substitution sequence is computed once;
    callers truncate to the first k concepts. Ties break toward the lower
    level, and the search is exhaustive over the M+1 levels per concept.
    """
    M = model.spec.max_concept_level
    w_t = model.latent.task_w.T
    b = model.latent.task_b
    n, K = s_tilde.shape
    chosen = np.zeros((n, K), dtype=np.int64)
    for i in range(n):
        order = _confidence_order(confidence[i])
        s = s_tilde[i].copy()
        for concept in order:
            best_level, best_p = 0, np.inf
            for m in range(M + 1):
                s_try = s.copy()
                s_try[concept] = m / M
                logits = (op.denoise @ s_try) @ w_t + b
                shifted = logits - logits.max()
                p_true = float(np.exp(shifted[grades[i]]) / np.exp(shifted).sum())
                if p_true < best_p - 1e-15:
                    best_level, best_p = m, p_true
            s[concept] = best_level / M
            chosen[i, concept] = best_level
    return chosen


def intervene_and_score(
    instances, model: TrainedModel, policy: InterventionPolicy
) -> InterventionResult:
    """Replace the top-k most confident concepts per instance and re-grade.

    Only the latent head's input changes; Stage-I and Stage-II parameters are
    untouched. The returned curve holds task accuracy for every k from 0 to K
    under the same policy kind (random substitutions are drawn once from the
    policy seed, so the curve is nested and deterministic).
    """
    spec = model.spec
    K, M, S = spec.num_concepts, spec.max_concept_level, spec.max_grade
    if policy.k > K:
        raise ValueError(f"k={policy.k} exceeds the {K} rubric concepts")
    pred = predict_split(model, instances)
    op = posterior_operator(model.latent)
    w_t = model.latent.task_w.T

    # Substitution level per (instance, concept), fixed across k so the curve
    # is nested and deterministic.
    if policy.kind == "none":
        levels = None
    elif policy.kind == "oracle":
        levels = pred["concept_true"]
    elif policy.kind == "random":
        rng = np.random.default_rng(np.random.SeedSequence(policy.seed))
        levels = rng.integers(0, M + 1, size=pred["s_tilde"].shape)
    elif policy.wrong_rule == "grade_min":
        levels = _grade_min_substitutions(
            pred["s_tilde"], pred["confidence"], pred["grade_true"], model, op
        )
    else:
        levels = np.vectorize(lambda c: wrong_level(int(c), M))(pred["concept_true"])

    curve = []
    metrics_at_k: Metrics | None = None
    for k in range(K + 1):
        s_mod = _substituted_scores(
            pred["s_tilde"], pred["confidence"], levels, k, M
        )
        logits = (s_mod @ op.denoise.T) @ w_t + model.latent.task_b[None, :]
        grade_pred = np.argmax(logits, axis=1)
        t_acc = float(np.mean(grade_pred == pred["grade_true"]))
        curve.append((k, t_acc))
        if k == policy.k:
            metrics_at_k = Metrics(
                t_acc=t_acc,
                t_f1=macro_f1(pred["grade_true"], grade_pred, S + 1),
                c_acc=float(np.mean(pred["concept_pred"] == pred["concept_true"])),
                c_f1=float(
                    np.mean(
                        [
                            macro_f1(pred["concept_true"][:, k_], pred["concept_pred"][:, k_], M + 1)
                            for k_ in range(K)
                        ]
                    )
                ),
            )
    return InterventionResult(policy=policy, metrics=metrics_at_k, curve=tuple(curve))


@dataclass(frozen=True)
class ConceptTraceRow:
    """One rubric dimension inside a decision trace."""

    name: str
    top_tokens: tuple[tuple[str, float], ...]
    argmax_level: int
    expected_score: float  # on the 0..M scale
    s_tilde: float  # normalized input to the latent head
    mu_post: float
    contribution: float  # W[predicted, k] * mu_post[k]
    label: int | None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "top_tokens": [[t, w] for t, w in self.top_tokens],
            "argmax_level": self.argmax_level,
            "expected_score": self.expected_score,
            "s_tilde": self.s_tilde,
            "mu_post": self.mu_post,
            "contribution": self.contribution,
            "label": self.label,
        }


@dataclass(frozen=True)
class DecisionTrace:
    """Auditable record tying attention evidence to the final grade logit."""

    instance_id: str
    concepts: tuple[ConceptTraceRow, ...]
    logits: tuple[float, ...]
    probs: tuple[float, ...]
    predicted_grade: int
    predicted_bias: float
    label: int | None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "concepts": [c.to_dict() for c in self.concepts],
            "logits": list(self.logits),
            "probs": list(self.probs),
            "predicted_grade": self.predicted_grade,
            "predicted_bias": self.predicted_bias,
            "label": self.label,
        }


def build_trace(
    instance: GradingInstance,
    model: TrainedModel,
    top_n_tokens: int = 5,
    labeled: bool = True,
) -> DecisionTrace:
    """Full forward pass recorded as an audit trace.

    The per-concept contributions plus the predicted grade's bias reproduce
    its logit exactly (the grade head is affine in the corrected concepts).
    """
    seq, fwd, res = model.predict(instance)
    spec = model.spec
    g = res.predicted_grade
    rows = []
    for k in range(spec.num_concepts):
        weights = fwd.attention[k]
        top = np.argsort(-weights, kind="stable")[:top_n_tokens]
        rows.append(
            ConceptTraceRow(
                name=spec.concept_names[k],
                top_tokens=tuple((seq.tokens[t], float(weights[t])) for t in top),
                argmax_level=int(fwd.argmax_levels[k]),
                expected_score=float(fwd.expected[k]),
                s_tilde=float(res.s_tilde[k]),
                mu_post=float(res.mu_post[k]),
                contribution=float(model.latent.task_w[g, k] * res.mu_post[k]),
                label=int(instance.concept_labels[k]) if labeled else None,
            )
        )
    return DecisionTrace(
        instance_id=instance.id,
        concepts=tuple(rows),
        logits=tuple(float(v) for v in res.logits),
        probs=tuple(float(v) for v in res.probs),
        predicted_grade=g,
        predicted_bias=float(model.latent.task_b[g]),
        label=instance.grade if labeled else None,
    )


@dataclass(frozen=True)
class DenoisingReport:
    """Empirical label correlation next to the learned partial correlation."""

    empirical: np.ndarray  # (K, K) Pearson correlation of integer labels
    partial: np.ndarray  # (K, K) from the latent precision
    zero_variance_concepts: tuple[int, ...]
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "empirical": self.empirical.tolist(),
            "partial": self.partial.tolist(),
            "zero_variance_concepts": list(self.zero_variance_concepts),
            "summary": self.summary,
        }


def _label_correlation(labels: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    K = labels.shape[1]
    centered = labels - labels.mean(axis=0, keepdims=True)
    std = centered.std(axis=0)
    flagged = tuple(int(k) for k in np.where(std == 0)[0])
    corr = np.eye(K)
    for i in range(K):
        for j in range(i + 1, K):
            if std[i] == 0 or std[j] == 0:
                continue
            r = float(np.mean(centered[:, i] * centered[:, j]) / (std[i] * std[j]))
            corr[i, j] = corr[j, i] = r
    return corr, flagged


def mean_abs_offdiag(m: np.ndarray) -> float:
    K = m.shape[0]
    if K < 2:
        return 0.0
    off = m[~np.eye(K, dtype=bool)]
    return float(np.mean(np.abs(off)))


def denoising_report(model: TrainedModel, instances) -> DenoisingReport:
    """Compare raw rubric-label correlation with the learned dependency graph."""
    instances = tuple(instances)
    if not instances:
        raise ValueError("empty split")
    labels = np.array([inst.concept_labels for inst in instances], dtype=np.float64)
    empirical, flagged = _label_correlation(labels)
    partial = partial_correlations(model.latent.omega())
    K = model.spec.num_concepts
    off_mask = ~np.eye(K, dtype=bool)
    summary = {
        "mean_abs_offdiag_empirical": mean_abs_offdiag(empirical),
        "mean_abs_offdiag_partial": mean_abs_offdiag(partial),
        "frac_partial_below_0.1": float(np.mean(np.abs(partial[off_mask]) < 0.1))
        if K > 1
        else 0.0,
    }
    return DenoisingReport(
        empirical=empirical,
        partial=partial,
        zero_variance_concepts=flagged,
        summary=summary,
    )
