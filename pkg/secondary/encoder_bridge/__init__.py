"""Transformer sentence-embedding exporter for the prototype engine's PTXE format."""

__version__ = "0.1.0"

from .export import (
    BridgeError,
    DatasetError,
    EncoderResolutionError,
    ExportReport,
    ExportSpec,
    SequenceOverflowError,
    SpecError,
    export_embeddings,
    read_sentences,
    write_ptxe,
)

__all__ = [
    "BridgeError",
    "DatasetError",
    "EncoderResolutionError",
    "ExportReport",
    "ExportSpec",
    "SequenceOverflowError",
    "SpecError",
    "export_embeddings",
    "read_sentences",
    "write_ptxe",
]
