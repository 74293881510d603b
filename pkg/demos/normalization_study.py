"""Why the distance layer is normalized and training is interleaved.

Three training arms on the same task and seed. Dropping per-example distance
normalization collapses accuracy outright: raw squared distances saturate the
softmax, the loss plateaus, and training cannot recover. Joint single-phase
training matches the interleaved schedule on accuracy at this scale, but it
quietly kills the routing structure: negative examples stop landing nearest
to negative prototypes, so a negative prediction can no longer be explained
by pointing at prototypical negative cases. The classwise interleaved phases
are what keep that channel alive.

    python3 demos/normalization_study.py
"""

import numpy as np

from prototex import (
    TrainConfig,
    TrainData,
    generate_synthetic,
    macro_f1,
    nearest_examples_per_prototype,
    predict_batch,
    run_training,
    segregation_metric,
)

dataset, embeddings = generate_synthetic(2000, 16, rng=424242)
splits = dataset.split_indices()
labels = dataset.labels()
data = TrainData.from_dataset(dataset, embeddings)
test_x = embeddings.vectors[splits["test"]]
test_y = labels[splits["test"]]
dev_x, dev_y = data.dev_x, data.dev_y

arms = {
    "interleaved + norm": TrainConfig(seed=0),
    "interleaved, raw distances": TrainConfig(seed=0, normalize=False),
    "single joint phase": TrainConfig(seed=0, algorithm="simple"),
}

print(f"{'arm':<28} {'test F1':>8} {'segregation':>12} {'neg routing':>12}")
for name, config in arms.items():
    head, _ = run_training(data, config)
    preds, _ = predict_batch(head, test_x)
    f1 = macro_f1(preds, test_y)

    # how many distinct training examples the prototypes collectively claim
    nearest = nearest_examples_per_prototype(
        head, embeddings.subset(splits["train"]), 5
    )
    seg = segregation_metric(nearest)["unique_count"]

    # fraction of dev negatives whose closest prototype is a negative one
    z = dev_x @ head.projection
    d = ((z[:, None, :] - head.prototypes[None]) ** 2).sum(-1)
    closest = np.argmin(d, axis=1)
    neg = dev_y == 0
    routing = np.mean(head.proto_class[closest[neg]] == 0)

    print(f"{name:<28} {f1:>8.4f} {seg:>9}/100 {routing:>12.3f}")

print("\nSingle-seed snapshot; the pattern holds across seeds. The raw-distance "
      "arm loses\naccuracy, and the joint arm keeps accuracy but loses negative "
      "routing, leaving its\nnegative predictions without prototypical cases to "
      "cite.")
