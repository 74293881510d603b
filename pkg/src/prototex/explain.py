"""Case-based explanations and the analyses built on top of them.

An Explanation records the complete decision path of one prediction: every
prototype's distance as consumed by the linear layer, that prototype's weight
column, and (for the leading prototypes) the nearest training exemplars. The
label is therefore recomputable from the record alone, which the faithfulness
check exploits.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingMatrix, LabeledDataset
from .errors import ConfigError, ShapeError, StateError
from .mathkit import squared_l2_dense
from .model import PrototypeHead, forward


@dataclass
class Exemplar:
    id: str
    text: str
    label: int
    subcategory: str | None
    distance: float


@dataclass
class PrototypeInfluence:
    index: int
    class_label: int
    distance: float  # as consumed by the linear layer (normalized when enabled)
    raw_distance: float
    weights: np.ndarray  # length-K column of the linear layer
    weighted_contribution: np.ndarray  # distance * weights, per class
    exemplars: list[Exemplar] = field(default_factory=list)


@dataclass
class Explanation:
    example_id: str
    predicted_label: int
    probabilities: np.ndarray
    ranking: list[PrototypeInfluence]  # all prototypes, ascending decision distance
    top_k: int


@dataclass
class SoftClusterModel:
    pi: np.ndarray  # m x n, each row a distribution over training examples
    z: np.ndarray  # length-m normalizers (0 where the zero-distance rule fired)
    psi: np.ndarray  # length-m positive-class probability per prototype


@dataclass
class TestPosterior:
    theta: np.ndarray  # length-m distribution over prototypes
    p_positive: float


def _check_trained(head) -> None:
    if head is None:
        raise StateError("explanation requires a trained head, got None")
    for name in ("projection", "prototypes", "linear_weights"):
        value = getattr(head, name, None)
        if value is None or not np.all(np.isfinite(value)):
            raise StateError(f"head parameter {name} is missing or non-finite")


def _project(head: PrototypeHead, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ head.projection


def explain_prediction(
    head: PrototypeHead,
    train_dataset: LabeledDataset,
    train_embeddings: EmbeddingMatrix,
    test_embedding: np.ndarray,
    example_id: str = "",
    top_k: int = 5,
    exemplars_per_proto: int = 1,
) -> Explanation:
    _check_trained(head)
    if top_k < 1 or top_k > head.n_prototypes:
        raise ConfigError(f"top_k must be in [1, {head.n_prototypes}], got {top_k}")
    x = np.asarray(test_embedding, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    trace = forward(head, x)
    predicted = int(np.argmax(trace.probabilities[0]))
    decision = trace.normalized_distances.values[0]
    raw = trace.raw_distances.values[0]
    order = np.argsort(decision, kind="stable")
    nearest = nearest_examples_per_prototype(head, train_embeddings, exemplars_per_proto)
    train_z = _project(head, train_embeddings.vectors)
    ranking = []
    for rank, j in enumerate(order):
        influence = PrototypeInfluence(
            index=int(j),
            class_label=int(head.proto_class[j]),
            distance=float(decision[j]),
            raw_distance=float(raw[j]),
            weights=head.linear_weights[:, j].copy(),
            weighted_contribution=decision[j] * head.linear_weights[:, j],
        )
        if rank < top_k:
            proto_d = squared_l2_dense(train_z, head.prototypes[j][None, :])[:, 0]
            for i in nearest[j]:
                ex = train_dataset.examples[i]
                influence.exemplars.append(
                    Exemplar(
                        id=ex.id,
                        text=ex.text,
                        label=ex.label,
                        subcategory=ex.subcategory,
                        distance=float(proto_d[i]),
                    )
                )
        ranking.append(influence)
    return Explanation(
        example_id=example_id,
        predicted_label=predicted,
        probabilities=trace.probabilities[0].copy(),
        ranking=ranking,
        top_k=top_k,
    )


def faithful_label(explanation: Explanation) -> int:
    """Recompute the label from the explanation's own distances and weights."""
    logits = np.zeros_like(explanation.ranking[0].weights)
    for influence in explanation.ranking:
        logits = logits + influence.distance * influence.weights
    return int(np.argmax(logits))


def nearest_examples_per_prototype(
    head: PrototypeHead, train_embeddings: EmbeddingMatrix, k: int
) -> np.ndarray:
    """For each prototype, indices of the k closest training examples.

    Distances are squared L2 in the projected space; ties break to the lower
    example index.
    """
    n = len(train_embeddings)
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} training examples")
    train_z = _project(head, train_embeddings.vectors)
    d = squared_l2_dense(train_z, head.prototypes)  # n x m
    order = np.argsort(d, axis=0, kind="stable")
    return order[:k].T.copy()  # m x k


def segregation_metric(nearest: np.ndarray) -> dict:
    """How spread out the per-prototype neighbor lists are.

    unique_count is the size of the union of all lists; the second number
    counts examples claimed by exactly one prototype.
    """
    flat = np.asarray(nearest).ravel()
    ids, counts = np.unique(flat, return_counts=True)
    per_example_lists = {}
    for j in range(nearest.shape[0]):
        for i in set(nearest[j].tolist()):
            per_example_lists[i] = per_example_lists.get(i, 0) + 1
    exactly_one = sum(1 for c in per_example_lists.values() if c == 1)
    return {"unique_count": int(ids.size), "exactly_one_prototype_count": int(exactly_one)}


def association_matrix(
    head: PrototypeHead, dataset: LabeledDataset, embeddings: EmbeddingMatrix
) -> tuple[list[str], np.ndarray]:
    """Fraction of each example group whose closest prototype is each prototype.

    Groups are the positive subcategories plus a "negative" row; rows sum to 1.
    """
    _check_trained(head)
    if len(dataset) != len(embeddings):
        raise ShapeError(f"{len(dataset)} examples for {len(embeddings)} embedding rows")
    z = _project(head, embeddings.vectors)
    d = squared_l2_dense(z, head.prototypes)
    closest = np.argmin(d, axis=1)
    groups: dict[str, list[int]] = {}
    for i, ex in enumerate(dataset.examples):
        name = "negative" if ex.label == 0 else (ex.subcategory or "positive")
        groups.setdefault(name, []).append(i)
    names = sorted(n for n in groups if n != "negative")
    if "negative" in groups:
        names.append("negative")
    rows = []
    kept = []
    for name in names:
        members = groups[name]
        if not members:
            warnings.warn(f"group {name!r} is empty; omitted from association matrix")
            continue
        counts = np.bincount(closest[members], minlength=head.n_prototypes)
        rows.append(counts / len(members))
        kept.append(name)
    return kept, np.vstack(rows)


def soft_cluster_build(
    prototypes: np.ndarray, latent_examples: np.ndarray, labels: np.ndarray
) -> SoftClusterModel:
    """Reciprocal-distance soft clustering of training examples per prototype.

    Inputs live in the head's latent space (prototypes and projected
    examples). Each prototype induces a distribution over examples with
    probability proportional to 1/distance; coinciding examples absorb all
    mass uniformly (the limit of the reciprocal rule).
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    latent_examples = np.asarray(latent_examples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    d = squared_l2_dense(prototypes, latent_examples)  # m x n
    m, n = d.shape
    pi = np.zeros((m, n))
    z = np.zeros(m)
    for j in range(m):
        zero = d[j] == 0.0
        if np.any(zero):
            pi[j, zero] = 1.0 / np.sum(zero)
        else:
            inv = 1.0 / d[j]
            z[j] = 1.0 / inv.sum()
            pi[j] = z[j] * inv
    psi = pi @ labels
    return SoftClusterModel(pi=pi, z=z, psi=psi)


def soft_cluster_infer(
    model: SoftClusterModel, prototypes: np.ndarray, latent_test: np.ndarray
) -> TestPosterior:
    """Label posterior for one latent test vector under the soft clustering."""
    prototypes = np.asarray(prototypes, dtype=np.float64)
    x = np.asarray(latent_test, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    d = squared_l2_dense(x, prototypes)[0]  # length m
    zero = d == 0.0
    theta = np.zeros_like(d)
    if np.any(zero):
        theta[zero] = 1.0 / np.sum(zero)
    else:
        inv = 1.0 / d
        theta = inv / inv.sum()
    p_positive = float(theta @ model.psi)
    return TestPosterior(theta=theta, p_positive=p_positive)


def knn_classify(
    train_embeddings: np.ndarray,
    train_labels: np.ndarray,
    test_embeddings: np.ndarray,
    k: int = 5,
) -> np.ndarray:
    """Majority vote over the k nearest training points in raw embedding space.

    Distances are squared L2 on the unprojected vectors; an even vote goes to
    the negative class.
    """
    train_x = np.asarray(train_embeddings, dtype=np.float64)
    test_x = np.asarray(test_embeddings, dtype=np.float64)
    y = np.asarray(train_labels)
    n = train_x.shape[0]
    if k > n or k < 1:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    d = squared_l2_dense(test_x, train_x)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    votes = y[order].sum(axis=1)
    return (votes * 2 > k).astype(np.int64)
