"""Exception hierarchy.

Three broad classes map onto the CLI exit codes: ConfigError (usage, exit 1),
DataError and its subclasses (bad inputs or files, exit 2), and ProviderError
(model/transport failures, exit 3).
"""

from __future__ import annotations


class TiclError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TiclError):
    """Invalid configuration or invalid call arguments."""


class DataError(TiclError):
    """Invalid data: stores, manifests, embedding files, queries."""


class ZeroNorm(DataError):
    """Vector norm below the usable threshold; the embedding is degenerate."""

    def __init__(self, message: str = "vector has (near-)zero L2 norm", row: int | None = None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class DimMismatch(DataError):
    """Two vectors, or a vector and a declared dimension, disagree."""


class NormalizationError(DataError):
    """Stored vector deviates from unit norm beyond the repairable band."""

    def __init__(self, row: int, norm: float):
        self.row = row
        self.norm = norm
        super().__init__(f"row {row} has norm {norm:.6g}, beyond the re-normalization band")


class ParseError(DataError):
    """Malformed manifest or record line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateId(DataError):
    def __init__(self, utterance_id: str):
        self.utterance_id = utterance_id
        super().__init__(f"duplicate utterance_id {utterance_id!r}")


class CountMismatch(DataError):
    """Embedding file row count differs from the store's record count."""


class BadMagic(DataError):
    """Embedding file does not start with the expected magic bytes."""


class UnsupportedVersion(DataError):
    """Embedding file declares a version or dtype this reader does not handle."""


class TruncatedFile(DataError):
    """Embedding file size does not match the payload its header declares."""


class MissingPseudoLabelEmbedding(DataError):
    """Semantic retrieval requires a pseudo-label embedding and none is present."""


class EmptyStore(DataError):
    """No usable candidates to retrieve from."""


class EmptyStageOne(DataError):
    """Acoustic rerank called with an empty stage-1 candidate list."""


class EmptyReference(DataError):
    """WER is undefined for an empty reference token sequence."""


class NoValidPairs(DataError):
    """Corpus WER needs at least one pair with a non-empty reference."""


class ZeroBaseline(DataError):
    """Relative reduction is undefined for a zero baseline WER."""


class ProviderError(TiclError):
    """A provider call failed (transport, model, or missing fixture entry)."""
