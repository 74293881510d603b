"""Exception taxonomy for the prototype classification engine."""


class PrototexError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PrototexError):
    """Operands have incompatible shapes."""


class ConfigError(PrototexError):
    """A configuration value violates its constraints."""


class EmptyRowError(PrototexError):
    """A row has no unmasked entries where at least one is required."""


class EmptySelectionError(PrototexError):
    """A reduction was requested over an empty selection."""


class LabelError(PrototexError):
    """A class label lies outside the configured range."""


class StateError(PrototexError):
    """An operation was invoked on model state that is not ready for it."""


class NonFiniteGradientError(PrototexError):
    """A gradient contained NaN or infinity; carries the parameter-group name."""

    def __init__(self, group: str):
        super().__init__(f"non-finite gradient in parameter group '{group}'")
        self.group = group


class DatasetFormatError(PrototexError):
    """A dataset file failed validation.  Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmbeddingFormatError(PrototexError):
    """An embedding file failed validation."""


class EmbeddingMagicError(EmbeddingFormatError):
    """The embedding file does not start with the expected magic bytes."""


class EmbeddingVersionError(EmbeddingFormatError):
    """The embedding file declares an unsupported format version."""


class EmbeddingCountError(EmbeddingFormatError):
    """Row count in the embedding file disagrees with the dataset."""


class EmbeddingAlignmentError(EmbeddingFormatError):
    """Ids in the embedding file do not align with the dataset ids."""


class NonFiniteEmbeddingError(EmbeddingFormatError):
    """The embedding file contains NaN or infinite values."""


class CheckpointError(PrototexError):
    """A checkpoint file failed validation."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint declares a format version this build cannot read."""


class CheckpointCorruptError(CheckpointError):
    """The checkpoint file is truncated or malformed."""
