"""Two-stage training loop, optimizer, schedule, metrics, and the model bundle.

Stage I fits the encoder (toy embedding table when trainable), the concept
query bank, and the per-concept classifiers under concept cross-entropy plus
the pairwise ordinal calibration loss, selecting the epoch with the best dev
concept macro-F1. Stage II freezes all of that, recomputes normalized concept
scores without gradients, and fits the latent correction head and grade
classifier, selecting on dev task macro-F1. Both stages share a seeded,
deterministic minibatch loop with linear warmup/decay on top of Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from reccbm.concept import (
    ConceptClassifiers,
    ConceptQueryBank,
    backward_concepts_batch,
    concept_nll_batch,
    forward_concepts,
    forward_concepts_batch,
    init_query_bank,
    score_grad_to_logits,
)
from reccbm.data import Dataset, GradingInstance, RubricSpec
from reccbm.embedding import (
    EmbeddingProvider,
    EmbeddingProviderConfig,
    positional_encoding,
    token_indices,
)
from reccbm.latent import (
    LatentHeadParams,
    PosteriorResult,
    posterior,
    posterior_operator,
    stage2_objective,
)
from reccbm.ranking import build_pairs, ranking_loss

logger = logging.getLogger("reccbm.trainer")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both stages; defaults target the desk-scale corpus."""

    stage1_lr: float = 3e-3
    stage2_lr: float = 5e-3
    lam_c: float = 1.0
    lam_r: float = 0.4
    lam_t: float = 1.0
    lam_d: float = 0.1
    lam_s: float = 0.005
    tau: float = 1.0
    batch_size: int = 8
    epochs_stage1: int = 50
    epochs_stage2: int = 50
    patience: int = 3
    warmup_ratio: float = 0.1
    precision_eps: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.stage1_lr <= 0 or self.stage2_lr <= 0:
            raise ValueError("learning rates must be positive")
        for name in ("lam_c", "lam_r", "lam_t", "lam_d", "lam_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1 or self.epochs_stage1 < 1 or self.epochs_stage2 < 1:
            raise ValueError("batch_size and epoch budgets must be >= 1")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.precision_eps <= 0:
            raise ValueError("precision_eps must be positive")

    def to_dict(self) -> dict:
        return {
            "stage1_lr": self.stage1_lr,
            "stage2_lr": self.stage2_lr,
            "lam_c": self.lam_c,
            "lam_r": self.lam_r,
            "lam_t": self.lam_t,
            "lam_d": self.lam_d,
            "lam_s": self.lam_s,
            "tau": self.tau,
            "batch_size": self.batch_size,
            "epochs_stage1": self.epochs_stage1,
            "epochs_stage2": self.epochs_stage2,
            "patience": self.patience,
            "warmup_ratio": self.warmup_ratio,
            "precision_eps": self.precision_eps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class Metrics:
    """Task and concept accuracy/macro-F1, all in [0, 1]."""

    t_acc: float
    t_f1: float
    c_acc: float
    c_f1: float

    def to_dict(self) -> dict:
        return {"t_acc": self.t_acc, "t_f1": self.t_f1, "c_acc": self.c_acc, "c_f1": self.c_f1}


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> float:
    """Unweighted mean of per-class F1; classes with no support or predictions score 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    f1s = []
    for c in range(n_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def lr_at(step: int, total_steps: int, base_lr: float, warmup_ratio: float) -> float:
    """Linear warmup to the peak at warmup_ratio * total_steps, then linear decay to 0."""
    if total_steps <= 1:
        return base_lr
    warm = warmup_ratio * total_steps
    if step < warm:
        return base_lr * step / warm
    last = total_steps - 1
    if last <= warm:
        return base_lr
    return base_lr * max(0.0, last - step) / (last - warm)


class Adam:
    """Adaptive moment estimation over a fixed dict of named parameter arrays."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class Stage1Params:
    """Everything Stage I trains; table is None when the encoder is frozen."""

    bank: ConceptQueryBank
    classifiers: ConceptClassifiers
    table: np.ndarray | None

    def copy(self) -> "Stage1Params":
        return Stage1Params(
            bank=self.bank.copy(),
            classifiers=self.classifiers.copy(),
            table=None if self.table is None else self.table.copy(),
        )


class _SplitCache:
    """Tokenized instances of one split, ready for padded-batch assembly."""

    def __init__(self, instances, provider: EmbeddingProvider):
        self.instances = tuple(instances)
        self.labels = np.array([inst.concept_labels for inst in self.instances], dtype=np.int64)
        self.grades = np.array([inst.grade for inst in self.instances], dtype=np.int64)
        self.toy = provider.trainable
        self.d = provider.cfg.d
        self._pos = positional_encoding(provider.cfg.max_len, provider.cfg.d)
        if self.toy:
            self.token_idx = [
                token_indices(provider.sequence(inst).tokens, provider.cfg.vocab_size)
                for inst in self.instances
            ]
        else:
            self.H_fixed = [
                provider.embed(provider.sequence(inst)) for inst in self.instances
            ]

    def __len__(self):
        return len(self.instances)

    def batch(self, which: np.ndarray, table: np.ndarray | None):
        """Padded (H, mask) for the selected instance indices."""
        if self.toy:
            lengths = [len(self.token_idx[i]) for i in which]
        else:
            lengths = [self.H_fixed[i].shape[0] for i in which]
        B, T = len(which), max(lengths)
        H = np.zeros((B, T, self.d))
        mask = np.zeros((B, T), dtype=bool)
        for row, i in enumerate(which):
            n = lengths[row]
            if self.toy:
                H[row, :n] = table[self.token_idx[i]] + self._pos[:n]
            else:
                H[row, :n] = self.H_fixed[i]
            mask[row, :n] = True
        return H, mask


def stage1_batch_objective(
    cache: _SplitCache,
    which: np.ndarray,
    params: Stage1Params,
    lam_c: float,
    lam_r: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Concept CE plus ranking loss on one batch, with all Stage-I gradients.

    Returns (loss, grads) where grads has keys queries/clf_w/clf_b and, for a
    trainable encoder, a dense table gradient.
    """
    H, mask = cache.batch(which, params.table)
    fwd = forward_concepts_batch(H, mask, params.bank, params.classifiers)
    labels = cache.labels[which]
    loss_con, d_cls = concept_nll_batch(fwd["dists"], labels)
    pairs = build_pairs(labels)
    loss_rank, d_scores = ranking_loss(fwd["expected"], pairs)
    loss = lam_c * loss_con + lam_r * loss_rank
    d_cls_total = lam_c * d_cls + lam_r * score_grad_to_logits(
        fwd["dists"], fwd["expected"], d_scores
    )
    d_q, d_w, d_b, d_H = backward_concepts_batch(
        fwd, H, params.bank, params.classifiers, d_cls_total
    )
    grads = {"queries": d_q, "clf_w": d_w, "clf_b": d_b}
    if cache.toy:
        d_table = np.zeros_like(params.table)
        for row, i in enumerate(which):
            idx = cache.token_idx[i]
            np.add.at(d_table, idx, d_H[row, : len(idx)])
        grads["table"] = d_table
    return loss, grads


def _stage1_dists(cache: _SplitCache, params: Stage1Params, chunk: int = 128):
    """Concept distributions and expected scores for a whole split (no grads)."""
    n = len(cache)
    dists = None
    expected = np.zeros((n, cache.labels.shape[1]))
    for start in range(0, n, chunk):
        which = np.arange(start, min(start + chunk, n))
        H, mask = cache.batch(which, params.table)
        fwd = forward_concepts_batch(H, mask, params.bank, params.classifiers)
        if dists is None:
            dists = np.zeros((n,) + fwd["dists"].shape[1:])
        dists[which] = fwd["dists"]
        expected[which] = fwd["expected"]
    return dists, expected


def _epoch_order(seed: int, stage: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, stage, epoch)))
    return rng.permutation(n)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train_stage1(
    train: Dataset,
    dev: Dataset,
    cfg: TrainConfig,
    provider: EmbeddingProvider,
) -> tuple[Stage1Params, list[dict]]:
    """Fit encoder table, queries, and classifiers; keep the best dev C-F1 epoch."""
    spec = train.spec
    K, M, d = spec.num_concepts, spec.max_concept_level, provider.cfg.d
    if K > d:
        raise ValueError(f"need K <= d for orthonormal queries, got K={K}, d={d}")
    params = Stage1Params(
        bank=init_query_bank(K, d, cfg.tau, cfg.seed),
        classifiers=ConceptClassifiers.zeros(K, M, d),
        table=provider.table.copy() if provider.trainable else None,
    )
    train_cache = _SplitCache(train.split("train") or train.instances, provider)
    dev_cache = _SplitCache(dev.split("dev") or dev.instances, provider)

    named = {"queries": params.bank.queries, "clf_w": params.classifiers.weights,
             "clf_b": params.classifiers.biases}
    if params.table is not None:
        named["table"] = params.table
    opt = Adam(named)
    n_batches = int(np.ceil(len(train_cache) / cfg.batch_size))
    total_steps = cfg.epochs_stage1 * n_batches

    best = params.copy()
    best_score = -np.inf
    bad_epochs = 0
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs_stage1):
        order = _epoch_order(cfg.seed, 1, epoch, len(train_cache))
        losses = []
        lr = 0.0
        for b, which in enumerate(_batches(order, cfg.batch_size)):
            try:
                loss, grads = stage1_batch_objective(
                    train_cache, which, params, cfg.lam_c, cfg.lam_r
                )
            except FloatingPointError as e:
                raise RuntimeError(
                    f"stage 1 diverged at epoch {epoch}, batch {b}: {e}"
                ) from e
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"stage 1 diverged: non-finite loss at epoch {epoch}, batch {b}"
                )
            lr = lr_at(step, total_steps, cfg.stage1_lr, cfg.warmup_ratio)
            opt.step(grads, lr)
            step += 1
            losses.append(loss)
        dev_metrics = _concept_metrics(dev_cache, params, spec)
        log.append(
            {
                "stage": 1,
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "dev": dev_metrics,
                "lr": lr,
            }
        )
        logger.info("stage1 epoch %d loss %.4f dev C-F1 %.4f", epoch,
                    log[-1]["train_loss"], dev_metrics["c_f1"])
        if dev_metrics["c_f1"] > best_score:
            best_score = dev_metrics["c_f1"]
            best = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    return best, log


def _concept_metrics(cache: _SplitCache, params: Stage1Params, spec: RubricSpec) -> dict:
    dists, _ = _stage1_dists(cache, params)
    pred = np.argmax(dists, axis=2)
    K, M = spec.num_concepts, spec.max_concept_level
    c_acc = float(np.mean(pred == cache.labels))
    c_f1 = float(
        np.mean([macro_f1(cache.labels[:, k], pred[:, k], M + 1) for k in range(K)])
    )
    return {"c_acc": c_acc, "c_f1": c_f1}


def train_stage2(
    train: Dataset,
    dev: Dataset,
    stage1: Stage1Params,
    cfg: TrainConfig,
    provider: EmbeddingProvider,
    head_mode: str = "latent",
) -> tuple[LatentHeadParams, list[dict]]:
    """Fit (L, eta, W, b) on frozen normalized concept scores; select on dev T-F1."""
    spec = train.spec
    K, M, S = spec.num_concepts, spec.max_concept_level, spec.max_grade
    train_cache = _SplitCache(train.split("train") or train.instances, provider)
    dev_cache = _SplitCache(dev.split("dev") or dev.instances, provider)
    # Frozen concept predictions, computed once: Stage I receives no gradients.
    _, train_expected = _stage1_dists(train_cache, stage1)
    _, dev_expected = _stage1_dists(dev_cache, stage1)
    s_train = train_expected / M
    s_dev = dev_expected / M

    params = LatentHeadParams.init(K, S, eps=cfg.precision_eps)
    named = {"chol": params.chol, "log_var": params.log_var,
             "task_w": params.task_w, "task_b": params.task_b}
    opt = Adam(named)
    n_batches = int(np.ceil(len(train_cache) / cfg.batch_size))
    total_steps = cfg.epochs_stage2 * n_batches

    best = params.copy()
    best_score = -np.inf
    bad_epochs = 0
    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs_stage2):
        order = _epoch_order(cfg.seed, 2, epoch, len(train_cache))
        losses = []
        lr = 0.0
        for b, which in enumerate(_batches(order, cfg.batch_size)):
            try:
                loss, _, grads = stage2_objective(
                    s_train[which],
                    train_cache.grades[which],
                    train_cache.labels[which],
                    params,
                    cfg.lam_t,
                    cfg.lam_d,
                    cfg.lam_s,
                    M,
                    direct_head=(head_mode == "direct"),
                )
            except FloatingPointError as e:
                raise RuntimeError(
                    f"stage 2 diverged at epoch {epoch}, batch {b}: {e}"
                ) from e
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"stage 2 diverged: non-finite loss at epoch {epoch}, batch {b}"
                )
            lr = lr_at(step, total_steps, cfg.stage2_lr, cfg.warmup_ratio)
            opt.step(
                {"chol": grads.chol, "log_var": grads.log_var,
                 "task_w": grads.task_w, "task_b": grads.task_b},
                lr,
            )
            step += 1
            losses.append(loss)
        dev_grade_pred = _grade_predictions(s_dev, params, head_mode)
        t_acc = float(np.mean(dev_grade_pred == dev_cache.grades))
        t_f1 = macro_f1(dev_cache.grades, dev_grade_pred, S + 1)
        log.append(
            {
                "stage": 2,
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "dev": {"t_acc": t_acc, "t_f1": t_f1},
                "lr": lr,
            }
        )
        logger.info("stage2 epoch %d loss %.4f dev T-F1 %.4f", epoch,
                    log[-1]["train_loss"], t_f1)
        if t_f1 > best_score:
            best_score = t_f1
            best = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    return best, log


def _grade_predictions(s_batch: np.ndarray, params: LatentHeadParams, head_mode: str) -> np.ndarray:
    if head_mode == "direct":
        mu = s_batch
    else:
        mu = s_batch @ posterior_operator(params).denoise.T
    logits = mu @ params.task_w.T + params.task_b[None, :]
    return np.argmax(logits, axis=1)


@dataclass
class TrainedModel:
    """Frozen two-stage model: everything needed to grade, trace, and intervene."""

    spec: RubricSpec
    embed_cfg: EmbeddingProviderConfig
    stage1: Stage1Params
    latent: LatentHeadParams
    train_cfg: TrainConfig
    head_mode: str = "latent"
    log: list = field(default_factory=list)
    _provider: EmbeddingProvider | None = field(default=None, repr=False, compare=False)

    @property
    def provider(self) -> EmbeddingProvider:
        if self._provider is None:
            self._provider = EmbeddingProvider(self.embed_cfg)
        return self._provider

    def concept_forward(self, instance: GradingInstance):
        """Stage-I forward for one instance: (token sequence, ConceptForward)."""
        seq = self.provider.sequence(instance)
        H = self.provider.embed(seq, table=self.stage1.table)
        return seq, forward_concepts(H, self.stage1.bank, self.stage1.classifiers)

    def grade_from_scores(self, s_tilde: np.ndarray) -> PosteriorResult:
        if self.head_mode != "latent":
            raise ValueError("posterior readout requires the latent head")
        return posterior(s_tilde, self.latent)

    def predict(self, instance: GradingInstance):
        seq, fwd = self.concept_forward(instance)
        s_tilde = fwd.expected / self.spec.max_concept_level
        return seq, fwd, self.grade_from_scores(s_tilde)


def predict_split(model: TrainedModel, instances, chunk: int = 128) -> dict:
    """Batched predictions over instances: concept levels, scores, grades."""
    instances = tuple(instances)
    if not instances:
        raise ValueError("empty split")
    cache = _SplitCache(instances, model.provider)
    dists, expected = _stage1_dists(cache, model.stage1, chunk=chunk)
    s_tilde = expected / model.spec.max_concept_level
    grade_pred = _grade_predictions(s_tilde, model.latent, model.head_mode)
    return {
        "dists": dists,
        "expected": expected,
        "s_tilde": s_tilde,
        "confidence": dists.max(axis=2),
        "concept_pred": np.argmax(dists, axis=2),
        "concept_true": cache.labels,
        "grade_pred": grade_pred,
        "grade_true": cache.grades,
    }


def evaluate(model: TrainedModel, instances) -> Metrics:
    """Task and concept accuracy/macro-F1 on a split."""
    pred = predict_split(model, instances)
    spec = model.spec
    S, M, K = spec.max_grade, spec.max_concept_level, spec.num_concepts
    t_acc = float(np.mean(pred["grade_pred"] == pred["grade_true"]))
    t_f1 = macro_f1(pred["grade_true"], pred["grade_pred"], S + 1)
    c_acc = float(np.mean(pred["concept_pred"] == pred["concept_true"]))
    c_f1 = float(
        np.mean(
            [
                macro_f1(pred["concept_true"][:, k], pred["concept_pred"][:, k], M + 1)
                for k in range(K)
            ]
        )
    )
    return Metrics(t_acc=t_acc, t_f1=t_f1, c_acc=c_acc, c_f1=c_f1)


def train_full(
    train: Dataset,
    dev: Dataset,
    cfg: TrainConfig,
    embed_cfg: EmbeddingProviderConfig,
    head_mode: str = "latent",
) -> TrainedModel:
    """Run both stages on pre-split data and return the frozen model."""
    provider = EmbeddingProvider(embed_cfg)
    stage1, log1 = train_stage1(train, dev, cfg, provider)
    latent, log2 = train_stage2(train, dev, stage1, cfg, provider, head_mode=head_mode)
    return TrainedModel(
        spec=train.spec,
        embed_cfg=embed_cfg,
        stage1=stage1,
        latent=latent,
        train_cfg=cfg,
        head_mode=head_mode,
        log=log1 + log2,
    )
