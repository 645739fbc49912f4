"""Rubric-aware concept-bottleneck grading engine.

Pipeline: token embeddings -> per-concept attention pooling and ordinal
classification (Stage I, trained with concept cross-entropy plus pairwise
ordinal calibration) -> closed-form Gaussian error correction and an affine
grade head (Stage II). Ships an intervention harness, decision traces, a
read-only HTTP service, and a CLI.
"""

from reccbm.data import (
    Dataset,
    DataFormatError,
    GradingInstance,
    RubricSpec,
    assign_splits,
    generate_synthetic,
    load_dataset,
    load_spec,
    save_dataset,
    save_spec,
)
from reccbm.embedding import (
    EmbeddingProvider,
    EmbeddingProviderConfig,
    TokenSequence,
    tokenize,
)
from reccbm.concept import (
    ConceptClassifiers,
    ConceptForward,
    ConceptQueryBank,
    concept_loss,
    forward_concepts,
    init_query_bank,
)
from reccbm.ranking import PairSet, build_pairs, ranking_loss
from reccbm.latent import (
    LatentHeadParams,
    PosteriorResult,
    mmse_oracle,
    mmse_oracle_monte_carlo,
    partial_correlations,
    posterior,
    stage2_losses,
)
from reccbm.trainer import (
    Metrics,
    TrainConfig,
    TrainedModel,
    evaluate,
    train_full,
    train_stage1,
    train_stage2,
)
from reccbm.checkpoint import load_checkpoint, save_checkpoint
from reccbm.analysis import (
    DecisionTrace,
    InterventionPolicy,
    build_trace,
    denoising_report,
    intervene_and_score,
)

__all__ = [
    "Dataset",
    "DataFormatError",
    "GradingInstance",
    "RubricSpec",
    "assign_splits",
    "generate_synthetic",
    "load_dataset",
    "load_spec",
    "save_dataset",
    "save_spec",
    "EmbeddingProvider",
    "EmbeddingProviderConfig",
    "TokenSequence",
    "tokenize",
    "ConceptClassifiers",
    "ConceptForward",
    "ConceptQueryBank",
    "concept_loss",
    "forward_concepts",
    "init_query_bank",
    "PairSet",
    "build_pairs",
    "ranking_loss",
    "LatentHeadParams",
    "PosteriorResult",
    "mmse_oracle",
    "mmse_oracle_monte_carlo",
    "partial_correlations",
    "posterior",
    "stage2_losses",
    "Metrics",
    "TrainConfig",
    "TrainedModel",
    "evaluate",
    "train_full",
    "train_stage1",
    "train_stage2",
    "load_checkpoint",
    "save_checkpoint",
    "DecisionTrace",
    "InterventionPolicy",
    "build_trace",
    "denoising_report",
    "intervene_and_score",
]

__version__ = "0.1.0"
