"""Latent concept error correction and the grade head.

Normalized concept scores are treated as noisy Gaussian observations of a
latent concept vector with a learnable precision matrix. The closed-form
posterior mean (the unique MMSE estimate) is the corrected concept vector fed
to an affine grade classifier. The precision is parameterized through a
lower-triangular Cholesky factor so it stays positive definite under
unconstrained optimization; measurement variances live in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular


@dataclass
class LatentHeadParams:
    """Stage-II parameters: precision factor, log-variances, grade head."""

    chol: np.ndarray  # (K, K), only the lower triangle is meaningful
    log_var: np.ndarray  # (K,)
    task_w: np.ndarray  # (S+1, K)
    task_b: np.ndarray  # (S+1,)
    eps: float = 1e-4

    @classmethod
    def init(cls, K: int, S: int, eps: float = 1e-4) -> "LatentHeadParams":
        # Identity factor and unit noise give near-uniform shrinkage of ~0.5;
        # zero task weights give a uniform initial grade distribution.
        return cls(
            chol=np.eye(K),
            log_var=np.zeros(K),
            task_w=np.zeros((S + 1, K)),
            task_b=np.zeros(S + 1),
            eps=float(eps),
        )

    @property
    def num_concepts(self) -> int:
        return self.chol.shape[0]

    @property
    def num_grades(self) -> int:
        return self.task_w.shape[0]

    def omega(self) -> np.ndarray:
        """Latent precision L L^T + eps*I; positive definite by construction."""
        L = np.tril(self.chol)
        return L @ L.T + self.eps * np.eye(self.chol.shape[0])

    def noise_variances(self) -> np.ndarray:
        return np.exp(self.log_var)

    def copy(self) -> "LatentHeadParams":
        return LatentHeadParams(
            self.chol.copy(),
            self.log_var.copy(),
            self.task_w.copy(),
            self.task_b.copy(),
            self.eps,
        )


@dataclass
class PosteriorResult:
    """Posterior correction of one observation plus the grade readout."""

    s_tilde: np.ndarray  # (K,) observed normalized scores
    sigma_post: np.ndarray  # (K, K) posterior covariance
    mu_post: np.ndarray  # (K,) corrected concept vector
    denoise: np.ndarray  # (K, K) matrix A mapping observations to mu_post
    logits: np.ndarray  # (S+1,)
    probs: np.ndarray  # (S+1,)

    @property
    def predicted_grade(self) -> int:
        return int(np.argmax(self.logits))


@dataclass
class Stage2Grads:
    chol: np.ndarray
    log_var: np.ndarray
    task_w: np.ndarray
    task_b: np.ndarray


@dataclass
class PosteriorOperator:
    """Parameter-dependent pieces shared by every instance in a batch."""

    sigma_post: np.ndarray
    denoise: np.ndarray
    d_inv: np.ndarray  # (K,) diagonal of D^{-1}


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def posterior_operator(params: LatentHeadParams) -> PosteriorOperator:
    """Factor (Omega + D^{-1})^{-1} once; valid for any batch of observations."""
    omega = params.omega()
    with np.errstate(over="ignore"):
        d_inv = np.exp(-params.log_var)
    if not np.all(np.isfinite(d_inv)):
        raise FloatingPointError("log-variances overflowed D^{-1}")
    m = omega + np.diag(d_inv)
    try:
        cho = cho_factor(m, lower=True)
    except np.linalg.LinAlgError as e:
        cond = np.linalg.cond(m) if np.all(np.isfinite(m)) else np.inf
        raise FloatingPointError(
            f"posterior system is numerically singular (cond ~ {cond:.3e})"
        ) from e
    sigma_post = cho_solve(cho, np.eye(params.num_concepts))
    sigma_post = 0.5 * (sigma_post + sigma_post.T)  # keep exact symmetry
    return PosteriorOperator(
        sigma_post=sigma_post, denoise=sigma_post * d_inv[None, :], d_inv=d_inv
    )


def posterior(s_tilde: np.ndarray, params: LatentHeadParams) -> PosteriorResult:
    """Closed-form MMSE correction of one score vector plus grade logits."""
    s = np.asarray(s_tilde, dtype=np.float64)
    if s.shape != (params.num_concepts,):
        raise ValueError(f"expected {params.num_concepts} scores, got {s.shape}")
    op = posterior_operator(params)
    mu = op.denoise @ s
    logits = params.task_w @ mu + params.task_b
    return PosteriorResult(
        s_tilde=s,
        sigma_post=op.sigma_post,
        mu_post=mu,
        denoise=op.denoise,
        logits=logits,
        probs=_softmax(logits),
    )


def mmse_oracle(omega: np.ndarray, d_diag: np.ndarray, s_tilde: np.ndarray) -> np.ndarray:
    """Conditional-mean form Omega^{-1} (Omega^{-1} + D)^{-1} s_tilde.

    Deliberately a different code path (explicit inverse + generic solve) from
    posterior(); the two must agree, which makes this an algebraic oracle.
    """
    omega = np.asarray(omega, dtype=np.float64)
    d_diag = np.asarray(d_diag, dtype=np.float64)
    omega_inv = np.linalg.inv(omega)
    return omega_inv @ np.linalg.solve(omega_inv + np.diag(d_diag), np.asarray(s_tilde))


def mmse_oracle_monte_carlo(
    omega: np.ndarray,
    d_diag: np.ndarray,
    s_tilde: np.ndarray,
    n_samples: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares estimate of the denoising map from simulated draws.

    Samples z ~ N(0, Omega^{-1}) and s = z + N(0, D), fits the linear map
    s -> z, and returns (prediction at s_tilde, fitted K x K matrix). The MMSE
    estimator is linear here, so the fit converges to the true denoiser.
    """
    omega = np.asarray(omega, dtype=np.float64)
    d_diag = np.asarray(d_diag, dtype=np.float64)
    K = omega.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    R = np.linalg.cholesky(omega)
    # z = R^{-T} u has covariance (R R^T)^{-1} = Omega^{-1}
    u = rng.standard_normal((n_samples, K))
    z = solve_triangular(R, u.T, lower=True, trans="T").T
    s = z + rng.standard_normal((n_samples, K)) * np.sqrt(d_diag)[None, :]
    coef, *_ = np.linalg.lstsq(s, z, rcond=None)
    fitted = coef.T
    return fitted @ np.asarray(s_tilde), fitted


def stage2_objective(
    s_batch: np.ndarray,
    grades: np.ndarray,
    concept_labels: np.ndarray,
    params: LatentHeadParams,
    lam_t: float,
    lam_d: float,
    lam_s: float,
    max_level: int,
    direct_head: bool = False,
) -> tuple[float, dict, Stage2Grads]:
    """Mean over a batch of the Stage-II loss, with analytic gradients.

    Per instance: lam_t * task cross-entropy + lam_d * mean squared gap
    between the corrected concepts and the normalized labels + lam_s * L1 on
    the strict lower triangle of the Cholesky factor. With direct_head the
    posterior is bypassed (mu = s) and only the grade head receives gradients.
    """
    S_batch = np.atleast_2d(np.asarray(s_batch, dtype=np.float64))
    B, K = S_batch.shape
    grades = np.asarray(grades, dtype=np.int64).reshape(B)
    c_norm = np.asarray(concept_labels, dtype=np.float64).reshape(B, K) / max_level

    if direct_head:
        mu = S_batch
    else:
        op = posterior_operator(params)
        mu = S_batch @ op.denoise.T

    logits = mu @ params.task_w.T + params.task_b[None, :]
    probs = _softmax(logits)
    picked = probs[np.arange(B), grades]
    l_task = float(-np.log(np.maximum(picked, 1e-12)).mean())
    l_den = float((np.square(mu - c_norm).sum(axis=1) / K).mean())
    strict_lower = np.tril(params.chol, k=-1)
    l_spa = float(np.abs(strict_lower).sum())
    total = lam_t * l_task + lam_d * l_den + lam_s * l_spa

    # backward
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), grades] = 1.0
    d_logits = lam_t * (probs - onehot) / B
    d_task_w = d_logits.T @ mu
    d_task_b = d_logits.sum(axis=0)
    d_mu = d_logits @ params.task_w + lam_d * (2.0 / K) * (mu - c_norm) / B

    if direct_head:
        d_chol = np.zeros_like(params.chol)
        d_log_var = np.zeros(K)
    else:
        w_batch = S_batch * op.d_inv[None, :]  # rows are D^{-1} s
        d_sigma = d_mu.T @ w_batch
        d_w = d_mu @ op.sigma_post
        d_m = -op.sigma_post @ d_sigma @ op.sigma_post
        d_dinv = np.diag(d_m) + (d_w * S_batch).sum(axis=0)
        d_log_var = -op.d_inv * d_dinv
        L = np.tril(params.chol)
        d_chol = np.tril((d_m + d_m.T) @ L)
    d_chol += lam_s * np.sign(strict_lower)  # subgradient: 0 at exact zeros

    parts = {"task": l_task, "den": l_den, "spa": l_spa}
    return total, parts, Stage2Grads(d_chol, d_log_var, d_task_w, d_task_b)


def stage2_losses(
    result: PosteriorResult,
    grade: int,
    concept_labels,
    params: LatentHeadParams,
    lam_t: float,
    lam_d: float,
    lam_s: float,
    max_level: int,
) -> tuple[float, dict, Stage2Grads]:
    """Single-instance Stage-II loss and gradients w.r.t. (L, eta, W, b)."""
    return stage2_objective(
        result.s_tilde[None, :],
        np.array([grade]),
        np.asarray(concept_labels, dtype=np.float64)[None, :],
        params,
        lam_t,
        lam_d,
        lam_s,
        max_level,
    )


def partial_correlations(omega: np.ndarray) -> np.ndarray:
    """Partial correlations implied by a precision matrix: -O_ij/sqrt(O_ii O_jj)."""
    omega = np.asarray(omega, dtype=np.float64)
    dd = np.sqrt(np.diag(omega))
    r = -omega / np.outer(dd, dd)
    np.fill_diagonal(r, 1.0)
    return r
