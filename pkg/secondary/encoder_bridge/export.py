"""Encode dataset sentences with a pretrained transformer, write PTXE.

One-shot batch pipeline: read a JSONL dataset, run the encoder, pool one
vector per sentence, and write a binary embedding file whose rows align
with dataset order. Sequence-to-sequence checkpoints contribute only their
encoder stack; plain encoders are used as-is.

Exports are deterministic for fixed encoder weights and spec: inference
runs under no_grad with dropout disabled, so the only wiggle room is the
runtime's reduction order. Pin ``torch.set_num_threads(1)`` before calling
if bit-identical re-exports across machines matter; on one machine with a
fixed thread count, re-exports are already bit-identical.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

POOLING_MODES = ("cls", "eos", "mean")
OVERFLOW_MODES = ("truncate", "error")

PTXE_MAGIC = b"PTXE"
PTXE_VERSION = 1


class BridgeError(Exception):
    """Base class for exporter errors."""


class SpecError(BridgeError):
    """An export-spec value violates its constraints."""


class DatasetError(BridgeError):
    """The dataset file is missing, malformed, or empty."""


class EncoderResolutionError(BridgeError):
    """The encoder identifier could not be loaded."""


class SequenceOverflowError(BridgeError):
    """Sequences exceed max_length under the 'error' overflow policy."""

    def __init__(self, ids: list[str]):
        preview = ", ".join(ids[:5])
        super().__init__(
            f"{len(ids)} sequence(s) exceed max_length: {preview}"
            + ("..." if len(ids) > 5 else "")
        )
        self.ids = ids


@dataclass(frozen=True)
class ExportSpec:
    """Everything one export needs; the output dimension comes from the encoder."""

    dataset_path: str
    encoder: str
    pooling: str = "eos"
    max_length: int = 512
    output_path: str = "embeddings.ptxe"
    batch_size: int = 32
    overflow: str = "truncate"

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise SpecError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.overflow not in OVERFLOW_MODES:
            raise SpecError(
                f"overflow must be one of {OVERFLOW_MODES}, got {self.overflow!r}"
            )
        if self.max_length < 2:
            raise SpecError(f"max_length must be >= 2, got {self.max_length}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ExportReport:
    n: int
    dim: int
    output_path: str
    truncated_ids: list[str] = field(default_factory=list)


def read_sentences(path: str) -> tuple[list[str], list[str]]:
    """Ids and texts in file order. Only these two fields matter here."""
    ids: list[str] = []
    texts: list[str] = []
    seen: set[str] = set()
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{path} line {lineno}: {exc}")
                if not isinstance(row, dict) or "id" not in row or "text" not in row:
                    raise DatasetError(f"{path} line {lineno}: need 'id' and 'text'")
                if row["id"] in seen:
                    raise DatasetError(f"{path} line {lineno}: duplicate id {row['id']!r}")
                seen.add(row["id"])
                ids.append(str(row["id"]))
                texts.append(str(row["text"]))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}")
    if not ids:
        raise DatasetError(f"{path} contains no examples")
    return ids, texts


def write_ptxe(path: str, vectors: np.ndarray, ids: list[str]) -> None:
    """Binary layout: magic, u32 version, u64 n, u64 D, f32-LE rows, then
    a u32-length-prefixed UTF-8 id per row."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    n, dim = vectors.shape
    if len(ids) != n:
        raise SpecError(f"{len(ids)} ids for {n} rows")
    with open(path, "wb") as fh:
        fh.write(PTXE_MAGIC)
        fh.write(struct.pack("<I", PTXE_VERSION))
        fh.write(struct.pack("<QQ", n, dim))
        fh.write(vectors.tobytes())
        for ex_id in ids:
            raw = ex_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def resolve_encoder(name: str):
    """Load tokenizer and encoder stack for a model id or local path."""
    import torch  # noqa: F401  (import check belongs with transformers)
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(name)
        model = AutoModel.from_pretrained(name)
    except (OSError, ValueError, EnvironmentError) as exc:
        raise EncoderResolutionError(f"cannot load encoder {name!r}: {exc}")
    # seq2seq models: only the encoder half produces the representations
    if hasattr(model, "get_encoder"):
        model = model.get_encoder()
    model.eval()
    # the eos/mean index arithmetic assumes padding sits on the right
    tokenizer.padding_side = "right"
    return tokenizer, model


def pool_hidden(hidden, attention_mask, pooling: str):
    """One vector per sequence from (B, T, H) states and a 0/1 mask."""
    import torch

    if pooling == "cls":
        return hidden[:, 0]
    if pooling == "eos":
        last = attention_mask.sum(dim=1) - 1  # last non-padding position
        rows = torch.arange(hidden.shape[0], device=hidden.device)
        return hidden[rows, last]
    mask = attention_mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * mask).sum(dim=1) / mask.sum(dim=1)


def export_embeddings(spec: ExportSpec) -> ExportReport:
    """Run the export described by ``spec``; returns a summary report.

    Rows in the output file follow dataset order exactly. Sequences longer
    than ``max_length`` are truncated with a warning naming their ids, or
    rejected when the overflow policy is 'error'.
    """
    import torch

    ids, texts = read_sentences(spec.dataset_path)
    tokenizer, encoder = resolve_encoder(spec.encoder)

    lengths = [len(seq) for seq in tokenizer(texts, truncation=False)["input_ids"]]
    truncated = [i for i, n in zip(ids, lengths) if n > spec.max_length]
    if truncated:
        if spec.overflow == "error":
            raise SequenceOverflowError(truncated)
        preview = ", ".join(truncated[:10])
        warnings.warn(
            f"truncating {len(truncated)} sequence(s) to {spec.max_length} "
            f"tokens: {preview}" + ("..." if len(truncated) > 10 else "")
        )

    chunks = []
    with torch.no_grad():
        for start in range(0, len(texts), spec.batch_size):
            batch = tokenizer(
                texts[start : start + spec.batch_size],
                truncation=True,
                max_length=spec.max_length,
                padding=True,
                return_tensors="pt",
            )
            hidden = encoder(
                input_ids=batch["input_ids"], attention_mask=batch["attention_mask"]
            ).last_hidden_state
            pooled = pool_hidden(hidden, batch["attention_mask"], spec.pooling)
            chunks.append(pooled.to(torch.float32).cpu().numpy())

    vectors = np.concatenate(chunks, axis=0)
    write_ptxe(spec.output_path, vectors, ids)
    return ExportReport(
        n=vectors.shape[0],
        dim=vectors.shape[1],
        output_path=spec.output_path,
        truncated_ids=truncated,
    )
