"""Train a prototype head on a synthetic task and compare it to baselines.

The task mimics frozen sentence embeddings: isotropic background noise for
negatives, four partially overlapping cluster offsets for positives, and 15%
label noise on the training split only. Run with:

    python3 demos/quickstart.py
"""

import time

import numpy as np

from prototex import (
    TrainConfig,
    TrainData,
    f1_scores,
    generate_synthetic,
    knn_classify,
    predict_batch,
    run_training,
)

dataset, embeddings = generate_synthetic(2000, 16, rng=424242)
splits = dataset.split_indices()
labels = dataset.labels()
data = TrainData.from_dataset(dataset, embeddings)
test_x = embeddings.vectors[splits["test"]]
test_y = labels[splits["test"]]
print(f"task: {len(dataset)} examples, D={embeddings.dim}, "
      f"{int(labels.sum())} positive")

start = time.time()
head, report = run_training(data, TrainConfig(seed=0))
elapsed = time.time() - start
preds, _ = predict_batch(head, test_x)
result = f1_scores(preds, test_y)
print(f"\nprototype head ({report.epochs_run} epochs, {elapsed:.1f}s)")
print(f"  macro-F1 {result.f1_macro:.4f}  "
      f"(neg {result.f1_negative:.4f} / pos {result.f1_positive:.4f})")

knn_preds = knn_classify(data.train_x, data.train_y, test_x, k=5)
knn = f1_scores(knn_preds, test_y)
print(f"5-nn on raw embeddings\n  macro-F1 {knn.f1_macro:.4f}")

rng = np.random.default_rng(0)
rand = f1_scores(rng.integers(0, 2, test_y.size), test_y)
print(f"random guess\n  macro-F1 {rand.f1_macro:.4f}")
