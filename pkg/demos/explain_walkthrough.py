"""Walk through a case-based explanation for one test prediction.

Every prediction is a linear read-out of prototype distances, so the model's
own decision variables double as the explanation: which prototypes sat
closest, what each contributed to the logits, and which training sentences
each prototype stands for. The faithfulness check at the end recomputes every
prediction from its explanation alone.

    python3 demos/explain_walkthrough.py
"""

from prototex import (
    TrainConfig,
    TrainData,
    explain_prediction,
    faithful_label,
    generate_synthetic,
    predict_batch,
    run_training,
)

dataset, embeddings = generate_synthetic(2000, 16, rng=424242)
splits = dataset.split_indices()
data = TrainData.from_dataset(dataset, embeddings)
head, _ = run_training(data, TrainConfig(seed=0))

train_ds = dataset.subset(splits["train"])
train_emb = embeddings.subset(splits["train"])
test_idx = splits["test"]

target = int(test_idx[0])
example = dataset.examples[target]
expl = explain_prediction(
    head, train_ds, train_emb, embeddings.vectors[target],
    example_id=example.id, top_k=5, exemplars_per_proto=1,
)
print(f"example {example.id!r} (gold label {example.label})")
print(f"predicted label {expl.predicted_label}, "
      f"p = {expl.probabilities[expl.predicted_label]:.3f}\n")
print("top 5 prototypes by decision distance:")
for influence in expl.ranking[: expl.top_k]:
    exemplar = influence.exemplars[0]
    print(f"  #{influence.index} (class {influence.class_label}) "
          f"distance {influence.distance:+.3f}")
    print(f"      speaks for: {exemplar.text!r} (label {exemplar.label})")

# the explanation is the computation, so replaying it must give the prediction
preds, _ = predict_batch(head, embeddings.vectors[test_idx])
agree = 0
for row, i in enumerate(test_idx):
    e = explain_prediction(head, train_ds, train_emb, embeddings.vectors[int(i)])
    agree += faithful_label(e) == preds[row]
print(f"\nfaithfulness: explanation reproduces the prediction for "
      f"{agree}/{len(test_idx)} test examples")
