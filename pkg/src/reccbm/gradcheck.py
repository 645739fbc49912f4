"""Finite-difference audit of every analytic gradient in the engine.

Central differences (step 1e-5, float64) are compared against the closed-form
gradients of the Stage-I concept loss, the ranking loss, their weighted sum,
and the Stage-II total, over seeded random instances. The audit is the
independent oracle: it never calls the reverse-mode code it checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reccbm.concept import ConceptClassifiers, init_query_bank
from reccbm.data import RubricSpec, generate_synthetic
from reccbm.embedding import EmbeddingProvider, EmbeddingProviderConfig
from reccbm.latent import LatentHeadParams, stage2_objective
from reccbm.ranking import build_pairs, ranking_loss
from reccbm.trainer import Stage1Params, _SplitCache, stage1_batch_objective

DEFAULT_STEP = 1e-5
TOLERANCE = 1e-4


@dataclass(frozen=True)
class AuditRow:
    objective: str
    param: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def central_difference(objective, arr: np.ndarray, coords=None, step=DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of objective() w.r.t. arr, perturbed in place.

    coords limits the visited flat indices (untouched entries stay 0 in the
    result); arr is restored exactly afterwards.
    """
    grad = np.zeros(arr.size)
    indices = range(arr.size) if coords is None else coords
    for i in indices:
        old = arr.flat[i]
        arr.flat[i] = old + step
        fp = objective()
        arr.flat[i] = old - step
        fm = objective()
        arr.flat[i] = old
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(arr.shape)


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))


def _audit_setup(seed: int, K=4, M=3, S=4, d=16, vocab=64, batch=3):
    """Small random problem: instances, Stage-I params, Stage-II params."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
    spec = RubricSpec(K, M, S, tuple(f"c{k}" for k in range(K)))
    ds = generate_synthetic(spec, batch, np.eye(K), 0.2, seed=seed)
    cfg = EmbeddingProviderConfig(mode="toy", d=d, max_len=64, vocab_size=vocab, seed=seed)
    provider = EmbeddingProvider(cfg)
    cache = _SplitCache(ds.instances, provider)
    params = Stage1Params(
        bank=init_query_bank(K, d, tau=1.0, seed=seed),
        classifiers=ConceptClassifiers(
            rng.normal(0, 0.3, size=(K, M + 1, d)), rng.normal(0, 0.3, size=(K, M + 1))
        ),
        table=provider.table.copy(),
    )
    # Stage-II parameters kept away from the L1 kink at zero.
    chol = np.tril(rng.uniform(0.1, 0.5, size=(K, K)) * rng.choice([-1.0, 1.0], size=(K, K)))
    np.fill_diagonal(chol, rng.uniform(0.5, 1.5, size=K))
    latent = LatentHeadParams(
        chol=chol,
        log_var=rng.normal(0, 0.5, size=K),
        task_w=rng.normal(0, 0.5, size=(S + 1, K)),
        task_b=rng.normal(0, 0.2, size=S + 1),
    )
    s_batch = rng.uniform(0, 1, size=(batch, K))
    return spec, cache, params, latent, s_batch


def _touched_table_coords(cache: _SplitCache, which, d: int):
    rows = sorted({int(r) for i in which for r in cache.token_idx[i]})
    return [r * d + c for r in rows for c in range(d)]


def _audit_stage1(seed: int, lam_c: float, lam_r: float, label: str, step: float):
    spec, cache, params, _, _ = _audit_setup(seed)
    which = np.arange(len(cache))
    _, grads = stage1_batch_objective(cache, which, params, lam_c, lam_r)

    def objective():
        return stage1_batch_objective(cache, which, params, lam_c, lam_r)[0]

    d = params.bank.d
    rows = []
    for name, arr, analytic, coords in [
        ("queries", params.bank.queries, grads["queries"], None),
        ("clf_weights", params.classifiers.weights, grads["clf_w"], None),
        ("clf_biases", params.classifiers.biases, grads["clf_b"], None),
        ("toy_table", params.table, grads["table"], _touched_table_coords(cache, which, d)),
    ]:
        numeric = central_difference(objective, arr, coords=coords, step=step)
        if coords is not None:
            # untouched rows must have exactly zero analytic gradient
            mask = np.ones(arr.size, dtype=bool)
            mask[coords] = False
            off = float(np.max(np.abs(analytic.ravel()[mask]))) if mask.any() else 0.0
            err = max(max_rel_err(analytic.ravel()[coords], numeric.ravel()[coords]), off)
        else:
            err = max_rel_err(analytic, numeric)
        rows.append(AuditRow(label, name, err))
    return rows


def _audit_ranking(seed: int, step: float):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 78)))
    B, K, M = 5, 4, 3
    labels = rng.integers(0, M + 1, size=(B, K))
    scores = rng.uniform(0, M, size=(B, K))
    pairs = build_pairs(labels)
    _, d_scores = ranking_loss(scores, pairs)
    numeric = central_difference(lambda: ranking_loss(scores, pairs)[0], scores, step=step)
    return [AuditRow("ranking_loss", "scores", max_rel_err(d_scores, numeric))]


def _audit_stage2(seed: int, step: float):
    spec, _, _, latent, s_batch = _audit_setup(seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 79)))
    B = s_batch.shape[0]
    grades = rng.integers(0, spec.max_grade + 1, size=B)
    labels = rng.integers(0, spec.max_concept_level + 1, size=(B, spec.num_concepts))
    lam_t, lam_d, lam_s = 1.0, 0.1, 0.005

    def objective():
        return stage2_objective(
            s_batch, grades, labels, latent, lam_t, lam_d, lam_s, spec.max_concept_level
        )[0]

    _, _, grads = stage2_objective(
        s_batch, grades, labels, latent, lam_t, lam_d, lam_s, spec.max_concept_level
    )
    rows = []
    K = spec.num_concepts
    # the strict upper triangle of chol is not a parameter
    chol_coords = [i * K + j for i in range(K) for j in range(K) if j <= i]
    for name, arr, analytic, coords in [
        ("latent_chol", latent.chol, grads.chol, chol_coords),
        ("log_var", latent.log_var, grads.log_var, None),
        ("task_weights", latent.task_w, grads.task_w, None),
        ("task_bias", latent.task_b, grads.task_b, None),
    ]:
        numeric = central_difference(objective, arr, coords=coords, step=step)
        if coords is not None:
            err = max_rel_err(analytic.ravel()[coords], numeric.ravel()[coords])
        else:
            err = max_rel_err(analytic, numeric)
        rows.append(AuditRow("stage2_total", name, err))
    return rows


def run_gradient_audit(num_seeds: int = 20, step: float = DEFAULT_STEP) -> list[AuditRow]:
    """Worst relative error per (objective, parameter) across seeded instances."""
    worst: dict[tuple[str, str], float] = {}
    for seed in range(num_seeds):
        rows = []
        rows += _audit_stage1(seed, lam_c=1.0, lam_r=0.0, label="concept_loss", step=step)
        rows += _audit_stage1(seed, lam_c=1.0, lam_r=0.4, label="stage1_total", step=step)
        rows += _audit_ranking(seed, step)
        rows += _audit_stage2(seed, step)
        for row in rows:
            key = (row.objective, row.param)
            worst[key] = max(worst.get(key, 0.0), row.max_rel_err)
    return [AuditRow(obj, param, err) for (obj, param), err in worst.items()]


def format_audit_table(rows: list[AuditRow]) -> str:
    width = max(len(r.objective) for r in rows)
    pwidth = max(len(r.param) for r in rows)
    lines = [f"{'objective':<{width}}  {'parameter':<{pwidth}}  max rel err  status"]
    for r in rows:
        status = "ok" if r.ok else "FAIL"
        lines.append(f"{r.objective:<{width}}  {r.param:<{pwidth}}  {r.max_rel_err:.3e}    {status}")
    return "\n".join(lines)
