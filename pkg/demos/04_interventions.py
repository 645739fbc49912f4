"""Simulate educator interventions and watch the grade respond.

For the top-k most confident concepts we substitute the normalized score with
the true label (oracle), the farthest ordinal level (wrong), or a uniformly
random level, then re-run the frozen grade head. A faithful bottleneck shows
the asymmetry: corrections preserve or improve accuracy, corruptions destroy
it.
"""

import numpy as np

from reccbm import (
    EmbeddingProviderConfig,
    InterventionPolicy,
    RubricSpec,
    TrainConfig,
    assign_splits,
    generate_synthetic,
    intervene_and_score,
    train_full,
)

spec = RubricSpec(4, 3, 4, ("coverage", "correctness", "clarity", "depth"))
corr = np.full((4, 4), 0.5)
np.fill_diagonal(corr, 1.0)
ds = generate_synthetic(spec, 1200, corr, 0.25, seed=0)
ds = assign_splits(ds, (0.7, 0.2, 0.1), seed=0)

cfg = TrainConfig(seed=0)
# a small vocabulary forces hash collisions: concept evidence overlaps, so
# concept measurements are noisy and interventions have room to matter
embed_cfg = EmbeddingProviderConfig(mode="toy", d=64, max_len=128, vocab_size=40, seed=0)
model = train_full(ds, ds, cfg, embed_cfg)

test = ds.split("test")
print(f"test instances: {len(test)}\n")
print(f"{'k':>2s}  " + "  ".join(f"{kind:>7s}" for kind in ("none", "oracle", "wrong", "random")))

results = {
    kind: intervene_and_score(test, model, InterventionPolicy(kind, k=0, seed=0))
    for kind in ("none", "oracle", "wrong", "random")
}
for k in range(spec.num_concepts + 1):
    row = "  ".join(f"{results[kind].curve[k][1]:7.3f}" for kind in ("none", "oracle", "wrong", "random"))
    print(f"{k:2d}  {row}")

print("\nreading: oracle stays at or above the no-intervention baseline, wrong"
      "\ncollapses, random sits in between — the grade really flows through the"
      "\nconcept bottleneck.")
