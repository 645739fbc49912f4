"""Train both stages on a small corpus and read the metrics.

Stage I fits the toy embedding table, concept queries, and ordinal classifiers
under concept cross-entropy plus pairwise ranking calibration. Stage II
freezes them and fits the latent error-correction head and grade classifier
on the frozen normalized concept scores.
"""

import numpy as np

from reccbm import (
    EmbeddingProviderConfig,
    RubricSpec,
    TrainConfig,
    assign_splits,
    evaluate,
    generate_synthetic,
    train_full,
)

spec = RubricSpec(4, 3, 4, ("coverage", "correctness", "clarity", "depth"))
ds = generate_synthetic(spec, 1500, np.eye(4), 0.25, seed=0)
ds = assign_splits(ds, (0.7, 0.2, 0.1), seed=0)

cfg = TrainConfig(seed=0, epochs_stage1=15)
embed_cfg = EmbeddingProviderConfig(mode="toy", d=64, max_len=128, vocab_size=4096, seed=0)

model = train_full(ds, ds, cfg, embed_cfg)

print("training log (one line per epoch):")
for rec in model.log:
    dev = ", ".join(f"{k}={v:.3f}" for k, v in rec["dev"].items())
    print(f"  stage {rec['stage']} epoch {rec['epoch']:2d}  "
          f"loss {rec['train_loss']:.4f}  {dev}  lr {rec['lr']:.2e}")

for split in ("dev", "test"):
    m = evaluate(model, ds.split(split))
    print(f"\n{split}: T-Acc {m.t_acc:.3f}  T-F1 {m.t_f1:.3f}  "
          f"C-Acc {m.c_acc:.3f}  C-F1 {m.c_f1:.3f}")

grades = np.array([i.grade for i in ds.split("train")])
majority = np.bincount(grades).argmax()
test_grades = np.array([i.grade for i in ds.split("test")])
print(f"\nmajority-class baseline (grade {majority}): "
      f"{float(np.mean(test_grades == majority)):.3f}")
