"""The prototype classification head and its checkpoint persistence.

The head projects frozen input embeddings through a trainable D×d matrix (a
stand-in for encoder fine-tuning), measures squared-L2 distances to m
trainable prototype vectors, optionally standardizes each distance row, and
classifies with a zero-bias K×m linear layer plus softmax.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointCorruptError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
)
from .mathkit import DistanceMatrix, instance_normalize, softmax, squared_l2_distance_matrix
from .optim import xavier_uniform
from .serialize import DocReader, write_array, write_kv_block

CHECKPOINT_MAGIC = "PTEXCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class PrototypeHead:
    projection: np.ndarray  # D x d
    prototypes: np.ndarray  # m x d
    proto_class: np.ndarray  # length m, values in {0..K-1}
    linear_weights: np.ndarray  # K x m, bias fixed at zero
    normalize_distances: bool
    epsilon: float = 1e-5

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def proto_dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_prototypes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n_classes(self) -> int:
        return self.linear_weights.shape[0]

    def class_rows(self, label: int) -> np.ndarray:
        """Indices of the prototype rows assigned to a class."""
        return np.flatnonzero(self.proto_class == label)

    def copy(self) -> "PrototypeHead":
        return PrototypeHead(
            projection=self.projection.copy(),
            prototypes=self.prototypes.copy(),
            proto_class=self.proto_class.copy(),
            linear_weights=self.linear_weights.copy(),
            normalize_distances=self.normalize_distances,
            epsilon=self.epsilon,
        )


@dataclass
class ForwardTrace:
    """Every intermediate quantity of one forward pass, kept for explanations.

    normalized_distances holds whatever the linear layer consumed: the
    standardized matrix when normalization is on, the raw values otherwise.
    """

    raw_distances: DistanceMatrix
    normalized_distances: DistanceMatrix
    logits: np.ndarray
    probabilities: np.ndarray


def init_head(config, rng_seed) -> PrototypeHead:
    """Build a fresh head from a training configuration.

    Prototypes and linear weights are Xavier-uniform; the projection is the
    identity when the prototype space keeps the embedding dimension, Xavier
    otherwise. Negative-class prototypes occupy the last rows.
    """
    m = config.m
    k = config.n_classes
    if m < k:
        raise ConfigError(f"need at least one prototype per class, got m={m} for {k} classes")
    if config.neg_count < 0 or config.neg_count >= m:
        raise ConfigError(
            f"neg_count must be in [0, m), got {config.neg_count} with m={m}"
        )
    big_d = config.embed_dim
    if big_d is None:
        raise ConfigError("config.embed_dim must be set before initializing a head")
    small_d = config.proto_dim if config.proto_dim is not None else big_d
    if small_d < 1:
        raise ConfigError(f"proto_dim must be >= 1, got {small_d}")
    rng = np.random.default_rng(rng_seed)
    prototypes = xavier_uniform((m, small_d), rng)
    linear_weights = xavier_uniform((k, m), rng)
    if big_d == small_d:
        projection = np.eye(big_d)
    else:
        projection = xavier_uniform((big_d, small_d), rng)
    proto_class = np.ones(m, dtype=np.int64)
    if config.neg_count:
        proto_class[m - config.neg_count :] = 0
    return PrototypeHead(
        projection=projection,
        prototypes=prototypes,
        proto_class=proto_class,
        linear_weights=linear_weights,
        normalize_distances=config.normalize,
        epsilon=config.epsilon,
    )


def forward(head: PrototypeHead, X: np.ndarray) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.embed_dim:
        raise ShapeError(
            f"expected input of shape (n, {head.embed_dim}), got {X.shape}"
        )
    Z = X @ head.projection
    raw = squared_l2_distance_matrix(Z, head.prototypes)
    if head.normalize_distances:
        normed_values = instance_normalize(raw, epsilon=head.epsilon).values
    else:
        normed_values = raw.values.copy()
    normalized = DistanceMatrix(values=normed_values, mask=raw.mask.copy())
    logits = normalized.values @ head.linear_weights.T
    probabilities = softmax(logits, axis=1)
    return ForwardTrace(
        raw_distances=raw,
        normalized_distances=normalized,
        logits=logits,
        probabilities=probabilities,
    )


def predict_batch(head: PrototypeHead, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels (argmax, ties to the lowest class index) and probabilities."""
    trace = forward(head, X)
    labels = np.argmax(trace.probabilities, axis=1)
    return labels, trace.probabilities


def save_checkpoint(head: PrototypeHead, config, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{CHECKPOINT_MAGIC}\n")
        f.write(f"version {CHECKPOINT_VERSION}\n")
        write_kv_block(f, "config", dataclasses.asdict(config))
        write_array(f, "projection", head.projection)
        write_array(f, "prototypes", head.prototypes)
        write_array(f, "proto_class", head.proto_class)
        write_array(f, "linear_weights", head.linear_weights)


def load_checkpoint(path):
    """Read a checkpoint; returns (head, config)."""
    from .train import TrainConfig

    with open(path, encoding="utf-8") as f:
        reader = DocReader(f)
    try:
        reader.expect_line(CHECKPOINT_MAGIC)
    except CheckpointCorruptError as exc:
        raise CheckpointCorruptError(f"not a checkpoint file: {exc}") from exc
    version_line = reader.read_line().split()
    if len(version_line) != 2 or version_line[0] != "version":
        raise CheckpointCorruptError("missing version line")
    try:
        version = int(version_line[1])
    except ValueError as exc:
        raise CheckpointCorruptError(f"bad version {version_line[1]!r}") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} not supported (expected {CHECKPOINT_VERSION})"
        )
    config_dict = reader.read_kv_block("config")
    try:
        config = TrainConfig(**config_dict)
    except TypeError as exc:
        raise CheckpointCorruptError(f"bad config block: {exc}") from exc
    _, projection = reader.read_array("projection")
    _, prototypes = reader.read_array("prototypes")
    _, proto_class = reader.read_array("proto_class")
    _, linear_weights = reader.read_array("linear_weights")
    head = PrototypeHead(
        projection=projection,
        prototypes=prototypes,
        proto_class=proto_class.ravel(),
        linear_weights=linear_weights,
        normalize_distances=bool(config.normalize),
        epsilon=config.epsilon,
    )
    for name, arr in (
        ("projection", head.projection),
        ("prototypes", head.prototypes),
        ("linear_weights", head.linear_weights),
    ):
        if not np.all(np.isfinite(arr)):
            raise CheckpointCorruptError(f"non-finite values in {name}")
    return head, config
