"""Dataset and embedding ingestion, balanced batching, and a synthetic task.

The dataset file is line-delimited JSON with fields id, text, label and
optional subcategory/split. Embeddings travel in the PTXE binary layout
documented next to the reader below.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DatasetFormatError,
    EmbeddingAlignmentError,
    EmbeddingCountError,
    EmbeddingMagicError,
    EmbeddingVersionError,
    NonFiniteEmbeddingError,
)

PTXE_MAGIC = b"PTXE"
PTXE_VERSION = 1

SPLIT_NAMES = ("train", "dev", "test")


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    label: int
    subcategory: str | None = None
    split: str | None = None


@dataclass
class LabeledDataset:
    examples: list[Example]
    split: str | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset([self.examples[i] for i in indices], split=self.split)

    def split_by_tag(self) -> dict[str, "LabeledDataset"]:
        out: dict[str, LabeledDataset] = {}
        for name in SPLIT_NAMES:
            members = [ex for ex in self.examples if ex.split == name]
            if members:
                out[name] = LabeledDataset(members, split=name)
        return out

    def split_indices(self) -> dict[str, np.ndarray]:
        """Positional indices of each tagged split, aligned with embeddings."""
        out = {}
        for name in SPLIT_NAMES:
            idx = np.array(
                [i for i, ex in enumerate(self.examples) if ex.split == name], dtype=np.int64
            )
            if idx.size:
                out[name] = idx
        return out


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray  # n x D, float32
    ids: list[str]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def subset(self, indices) -> "EmbeddingMatrix":
        idx = np.asarray(indices)
        return EmbeddingMatrix(self.vectors[idx], [self.ids[i] for i in idx])


@dataclass
class BatchPlan:
    batches: list[np.ndarray]
    seed: int | None = None


def load_dataset(path) -> LabeledDataset:
    examples = []
    seen: dict[str | None, set] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(record, dict):
                raise DatasetFormatError("record is not an object", line=lineno)
            for key in ("id", "text", "label"):
                if key not in record:
                    raise DatasetFormatError(f"missing field {key!r}", line=lineno)
            label = record["label"]
            if label not in (0, 1):
                raise DatasetFormatError(f"label must be 0 or 1, got {label!r}", line=lineno)
            split = record.get("split")
            if split is not None and split not in SPLIT_NAMES:
                raise DatasetFormatError(f"unknown split {split!r}", line=lineno)
            ex = Example(
                id=str(record["id"]),
                text=str(record["text"]),
                label=int(label),
                subcategory=record.get("subcategory"),
                split=split,
            )
            bucket = seen.setdefault(ex.split, set())
            if ex.id in bucket:
                raise DatasetFormatError(f"duplicate id {ex.id!r}", line=lineno)
            bucket.add(ex.id)
            examples.append(ex)
    return LabeledDataset(examples)


def save_dataset(dataset: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in dataset.examples:
            record = {"id": ex.id, "text": ex.text, "label": ex.label}
            if ex.subcategory is not None:
                record["subcategory"] = ex.subcategory
            if ex.split is not None:
                record["split"] = ex.split
            f.write(json.dumps(record) + "\n")


def write_embeddings(path, emb: EmbeddingMatrix) -> None:
    vectors = np.ascontiguousarray(emb.vectors, dtype="<f4")
    n, d = vectors.shape
    if len(emb.ids) != n:
        raise EmbeddingCountError(f"{len(emb.ids)} ids for {n} vector rows")
    with open(path, "wb") as f:
        f.write(PTXE_MAGIC)
        f.write(struct.pack("<I", PTXE_VERSION))
        f.write(struct.pack("<QQ", n, d))
        f.write(vectors.tobytes())
        for ex_id in emb.ids:
            raw = ex_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)


def load_embeddings(path, dataset: LabeledDataset | None = None) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        blob = f.read()

    def take(offset, count):
        if offset + count > len(blob):
            raise EmbeddingCountError("file truncated")
        return blob[offset : offset + count], offset + count

    chunk, pos = take(0, 4)
    if chunk != PTXE_MAGIC:
        raise EmbeddingMagicError(f"bad magic {chunk!r}")
    chunk, pos = take(pos, 4)
    (version,) = struct.unpack("<I", chunk)
    if version != PTXE_VERSION:
        raise EmbeddingVersionError(f"unsupported version {version}")
    chunk, pos = take(pos, 16)
    n, d = struct.unpack("<QQ", chunk)
    chunk, pos = take(pos, n * d * 4)
    vectors = np.frombuffer(chunk, dtype="<f4").reshape(n, d).copy()
    ids = []
    for _ in range(n):
        chunk, pos = take(pos, 4)
        (length,) = struct.unpack("<I", chunk)
        chunk, pos = take(pos, length)
        ids.append(chunk.decode("utf-8"))
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteEmbeddingError("embedding matrix contains non-finite values")
    if dataset is not None:
        if n != len(dataset):
            raise EmbeddingCountError(f"{n} embedding rows for {len(dataset)} dataset examples")
        for row, (got, want) in enumerate(zip(ids, dataset.ids())):
            if got != want:
                raise EmbeddingAlignmentError(
                    f"row {row}: embedding id {got!r} does not match dataset id {want!r}"
                )
    return EmbeddingMatrix(vectors, ids)


def balanced_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> BatchPlan:
    """Index batches with the minority class upsampled to an even split.

    Positives fill ceil(B/2) slots, negatives the rest. The class with more
    examples is swept without replacement; the other is shuffled and extended
    by resampling until it covers every batch.
    """
    labels = np.asarray(labels)
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("balanced batching needs at least one example of each class")
    pos_per_batch = (batch_size + 1) // 2
    neg_per_batch = batch_size // 2
    # The larger class is swept once without replacement; the smaller one is
    # upsampled to fill its per-batch quota.
    n_batches = max(pos.size // pos_per_batch, neg.size // neg_per_batch, 1)

    def stream(indices, per_batch):
        order = rng.permutation(indices)
        need = n_batches * per_batch
        if need > order.size:
            extra = rng.choice(indices, size=need - order.size, replace=True)
            order = np.concatenate([order, extra])
        return order[:need].reshape(n_batches, per_batch)

    pos_rows = stream(pos, pos_per_batch)
    neg_rows = stream(neg, neg_per_batch)
    batches = []
    for b in range(n_batches):
        batch = np.concatenate([pos_rows[b], neg_rows[b]])
        batches.append(rng.permutation(batch))
    return BatchPlan(batches=batches)


def cluster_centers(
    n_clusters: int, D: int, signal_dims: int, separation: float, overlap_cos: float = 0.5
) -> np.ndarray:
    """Cluster center directions: unit vectors at pairwise cosine overlap_cos.

    The shared component models what the positive subcategories have in
    common; the per-cluster residual is what tells them apart. Centers live
    in the first signal_dims coordinates and have norm ``separation``.
    """
    if n_clusters > signal_dims:
        raise ConfigError(
            f"n_clusters ({n_clusters}) must be <= signal_dims ({signal_dims})"
        )
    if not 0.0 <= overlap_cos < 1.0:
        raise ConfigError(f"overlap_cos must be in [0, 1), got {overlap_cos}")
    gram = np.full((n_clusters, n_clusters), overlap_cos)
    np.fill_diagonal(gram, 1.0)
    directions = np.linalg.cholesky(gram)
    centers = np.zeros((n_clusters, D))
    centers[:, :n_clusters] = directions * separation
    return centers


def generate_synthetic(
    n: int,
    D: int,
    pos_frac: float = 0.35,
    signal_dims: int = 4,
    noise_scale: float = 0.7,
    rng: np.random.Generator | int = 0,
    n_clusters: int = 4,
    separation: float = 4.0,
    radius_sigma: float = 0.55,
    overlap_cos: float = 0.5,
    label_noise: float = 0.15,
) -> tuple[LabeledDataset, EmbeddingMatrix]:
    """Asymmetric binary task: background noise vs noise plus a cluster offset.

    Negatives are isotropic noise on all D dimensions, with a per-example
    lognormal radius factor (sigma radius_sigma) so example norms vary the
    way real sentence-embedding norms do. Positives add one of ``n_clusters``
    cluster-center offsets confined to the first ``signal_dims`` dimensions,
    so the negative class is defined purely by what it lacks; the centers
    share a common direction (pairwise cosine overlap_cos). Cluster ids
    become subcategory tags; splits are tagged 70/10/20.

    ``label_noise`` flips that fraction of train-split labels, mimicking
    annotation noise. Dev and test labels stay clean. Flipped examples keep
    their text and subcategory: only the recorded label is wrong.
    """
    if not 0.0 < pos_frac < 1.0:
        raise ConfigError(f"pos_frac must be in (0, 1), got {pos_frac}")
    if signal_dims > D or signal_dims < 1:
        raise ConfigError(f"signal_dims must be in [1, {D}], got {signal_dims}")
    if n_clusters < 1:
        raise ConfigError(f"n_clusters must be >= 1, got {n_clusters}")
    if noise_scale < 0:
        raise ConfigError(f"noise_scale must be >= 0, got {noise_scale}")
    if radius_sigma < 0:
        raise ConfigError(f"radius_sigma must be >= 0, got {radius_sigma}")
    if not 0.0 <= label_noise < 0.5:
        raise ConfigError(f"label_noise must be in [0, 0.5), got {label_noise}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)

    n_pos = round(n * pos_frac)
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    clusters = np.arange(n_pos) % n_clusters

    vectors = rng.normal(size=(n, D)) * noise_scale
    if radius_sigma > 0:
        vectors *= np.exp(rng.normal(scale=radius_sigma, size=(n, 1)))
    centers = cluster_centers(n_clusters, D, signal_dims, separation, overlap_cos)
    vectors[:n_pos] += centers[clusters]

    order = rng.permutation(n)
    vectors = vectors[order].astype(np.float32)
    labels = labels[order]
    clusters_by_row = np.full(n, -1, dtype=np.int64)
    clusters_by_row[: n_pos] = clusters
    clusters_by_row = clusters_by_row[order]

    n_train = round(n * 0.7)
    n_dev = round(n * 0.1)
    if label_noise > 0:
        flip = rng.random(n) < label_noise
        flip[n_train:] = False
        labels = np.where(flip, 1 - labels, labels)
    examples = []
    for i in range(n):
        if i < n_train:
            split = "train"
        elif i < n_train + n_dev:
            split = "dev"
        else:
            split = "test"
        if clusters_by_row[i] >= 0:
            sub = f"cluster{clusters_by_row[i]}"
            text = f"signal sentence {i:05d} from {sub}"
        else:
            sub = None
            text = f"background sentence {i:05d}"
        examples.append(
            Example(id=f"ex{i:05d}", text=text, label=int(labels[i]), subcategory=sub, split=split)
        )
    dataset = LabeledDataset(examples)
    emb = EmbeddingMatrix(vectors, dataset.ids())
    return dataset, emb
