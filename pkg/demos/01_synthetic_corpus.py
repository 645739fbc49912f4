"""Build a synthetic grading corpus and look at what the generator planted.

Each instance samples a latent Gaussian vector, bins every coordinate into
equal-probability ordinal levels, and writes a response whose tokens literally
name the concept levels (plus filler), so the attention encoder has signal to
find. The grade is a noisy rounding of the mean normalized level.
"""

import numpy as np

from reccbm import RubricSpec, assign_splits, generate_synthetic

spec = RubricSpec(
    num_concepts=4,
    max_concept_level=3,
    max_grade=4,
    concept_names=("coverage", "correctness", "clarity", "depth"),
)

# plant a strong correlation between the first two concepts
corr = np.eye(4)
corr[0, 1] = corr[1, 0] = 0.9

ds = generate_synthetic(spec, n=2000, latent_correlation=corr, noise_sd=0.25, seed=0)
ds = assign_splits(ds, (0.7, 0.2, 0.1), seed=0)

print(f"{len(ds)} instances; splits:",
      {name: len(ds.split(name)) for name in ("train", "dev", "test")})

inst = ds.instances[0]
print("\nfirst instance:")
print("  id      ", inst.id)
print("  labels  ", inst.concept_labels, "grade", inst.grade)
print("  response", inst.response[:90], "...")

labels = np.array([i.concept_labels for i in ds.instances])
print("\nlevel marginals (rows = concepts, expected ~0.25 each):")
for k, name in enumerate(spec.concept_names):
    fracs = [round(float(np.mean(labels[:, k] == m)), 3) for m in range(4)]
    print(f"  {name:12s} {fracs}")

r = np.corrcoef(labels[:, 0], labels[:, 1])[0, 1]
print(f"\nPearson correlation of the planted pair after binning: {r:.3f}")

grades = np.array([i.grade for i in ds.instances])
print("grade distribution:", np.bincount(grades, minlength=5).tolist())
