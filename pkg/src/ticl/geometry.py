"""Vector normalization, Euclidean distance, and exact top-K selection.

This is the numeric kernel shared by both retrieval stages. Embeddings are
stored in single precision (the common on-disk format for embedding dumps);
all norm and distance accumulation happens in double precision so that
rankings are stable regardless of storage precision.

Conventions fixed here and relied on everywhere else:
- a vector is "normalized" when its L2 norm is within 1e-6 of 1,
- a norm below 1e-12 marks a degenerate (unusable) embedding,
- candidate ranking ties are broken by ascending candidate index, which makes
  every retrieval result deterministic and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimMismatch, ZeroNorm

NORM_TOLERANCE = 1e-6
ZERO_NORM_THRESHOLD = 1e-12


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension real vector with an explicit normalization flag.

    `values` is an immutable float32 array. Construction validates the
    invariants: entries finite, dim >= 1, and, when `normalized` is set,
    unit L2 norm within NORM_TOLERANCE.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.size < 1:
            raise DimMismatch(f"embedding must be a 1-d vector with dim >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ZeroNorm("embedding contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.normalized:
            norm = float(np.linalg.norm(arr.astype(np.float64)))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise ZeroNorm(f"vector flagged normalized but has norm {norm:.8g}")

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    def __hash__(self) -> int:
        return hash((self.values.tobytes(), self.normalized))


@dataclass(frozen=True)
class RankedCandidate:
    """A candidate's position in the store plus its distance to the query."""

    candidate_index: int
    distance: float

    def __post_init__(self) -> None:
        if self.candidate_index < 0:
            raise ValueError("candidate_index must be non-negative")
        if self.distance < 0:
            raise ValueError("distance must be non-negative")


def l2_normalize(v: EmbeddingVector) -> EmbeddingVector:
    """Return v scaled to unit L2 norm, direction preserved.

    Raises ZeroNorm when the norm is below ZERO_NORM_THRESHOLD; such a vector
    carries no direction and must be rejected at ingest.
    """
    values64 = v.values.astype(np.float64)
    norm = float(np.linalg.norm(values64))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroNorm()
    return EmbeddingVector(values=(values64 / norm).astype(np.float32), normalized=True)


def euclidean_distance(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """L2 distance between two vectors, accumulated in double precision."""
    if u.dim != v.dim:
        raise DimMismatch(f"dims differ: {u.dim} vs {v.dim}")
    diff = u.values.astype(np.float64) - v.values.astype(np.float64)
    return float(np.linalg.norm(diff))


def distances_to(query: EmbeddingVector, matrix: np.ndarray) -> np.ndarray:
    """L2 distances from `query` to every row of `matrix`, in float64.

    `matrix` has shape (n, dim) in any float precision; the subtraction and
    norm run in float64. Used by both retrieval stages for the exhaustive
    scan over candidates.
    """
    if matrix.ndim != 2 or matrix.shape[1] != query.dim:
        raise DimMismatch(
            f"matrix shape {matrix.shape} incompatible with query dim {query.dim}"
        )
    diff = matrix.astype(np.float64) - query.values.astype(np.float64)[None, :]
    return np.linalg.norm(diff, axis=1)


def top_k(ranked: Iterable[RankedCandidate], k: int) -> list[RankedCandidate]:
    """The min(k, n) entries with smallest distance, ties by ascending index.

    Equivalent to a full stable sort by (distance, candidate_index) truncated
    to k. k larger than the input returns everything (evaluation sweeps must
    degrade gracefully on small candidate sets); k == 0 returns [].
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    items: Sequence[RankedCandidate] = list(ranked)
    if k == 0:
        return []
    ordered = sorted(items, key=lambda c: (c.distance, c.candidate_index))
    return ordered[:k]
