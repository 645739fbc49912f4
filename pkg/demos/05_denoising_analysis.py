"""Compare raw rubric-label correlation with the learned dependency structure.

The labels of a corpus with a planted correlated pair are densely correlated;
the latent head's precision matrix, regularized toward a sparse Cholesky
factor, keeps only the dependencies the data support. Partial correlations
read the learned conditional structure directly off the precision matrix.
"""

import numpy as np

from reccbm import (
    EmbeddingProviderConfig,
    RubricSpec,
    TrainConfig,
    assign_splits,
    denoising_report,
    generate_synthetic,
    train_full,
)

spec = RubricSpec(4, 3, 4, ("coverage", "correctness", "clarity", "depth"))
corr = np.eye(4)
corr[0, 1] = corr[1, 0] = 0.9
ds = generate_synthetic(spec, 1200, corr, 0.25, seed=0)
ds = assign_splits(ds, (0.7, 0.2, 0.1), seed=0)
embed_cfg = EmbeddingProviderConfig(mode="toy", d=64, max_len=128, vocab_size=4096, seed=0)


def show(name, matrix):
    print(f"{name}:")
    for row in matrix:
        print("   " + "  ".join(f"{v:+.2f}" for v in row))


for lam_s in (0.0, 0.1):
    model = train_full(ds, ds, TrainConfig(seed=0, lam_s=lam_s), embed_cfg)
    rep = denoising_report(model, ds.split("train"))
    print(f"\n=== sparsity weight {lam_s} ===")
    show("empirical label correlation", rep.empirical)
    show("learned partial correlation", rep.partial)
    print(f"mean |off-diagonal|: empirical {rep.summary['mean_abs_offdiag_empirical']:.3f}, "
          f"partial {rep.summary['mean_abs_offdiag_partial']:.3f}; "
          f"fraction |r_partial| < 0.1: {rep.summary['frac_partial_below_0.1']:.2f}")
