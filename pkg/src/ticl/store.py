"""Candidate dataset: manifest ingestion, embedding files, validation.

A store holds the ordered pool of (audio, transcription) pairs that retrieval
draws demonstrations from, with one precomputed normalized text embedding and
one acoustic embedding per record. Two on-disk formats live here:

Manifest (JSONL, UTF-8): one object per line with required string keys
"utterance_id", "audio_ref", "transcription" and optional "split".

Embedding file (binary, little-endian), header then payload, no padding:

    offset  size  field
    0       8     magic, ASCII "TICLEMB1"
    8       4     u32 version (1)
    12      1     u8 kind (1 = text, 2 = acoustic)
    13      1     u8 dtype (1 = float32)
    14      2     u16 reserved (0)
    16      4     u32 dim
    20      8     u64 count
    28      ...   count * dim little-endian float32, row-major

Embedding rows bind to manifest lines by position, never by id lookup: ids
live in exactly one place and any count mismatch fails loudly.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    DimMismatch,
    DuplicateId,
    NormalizationError,
    ParseError,
    TruncatedFile,
    UnsupportedVersion,
    ZeroNorm,
)
from .geometry import NORM_TOLERANCE, EmbeddingVector, l2_normalize

MAGIC = b"TICLEMB1"
FORMAT_VERSION = 1
KIND_CODES = {"text": 1, "acoustic": 2}
KIND_NAMES = {code: name for name, code in KIND_CODES.items()}
DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<8sIBBHIQ")

# Norm deviation in (NORM_TOLERANCE, RENORM_BAND) is repaired silently at
# attach time (storage-precision drift); at or beyond the band it is rejected.
RENORM_BAND = 1e-3


@dataclass(frozen=True)
class CandidateRecord:
    """One candidate pair plus its precomputed normalized embeddings."""

    utterance_id: str
    audio_ref: str
    transcription: str
    split: str | None = None
    text_embedding: EmbeddingVector | None = None
    acoustic_embedding: EmbeddingVector | None = None

    @property
    def usable(self) -> bool:
        """Records without answer text are retained for positional binding
        but excluded from retrieval."""
        return self.transcription.strip() != ""


@dataclass(frozen=True)
class CandidateStore:
    """Ordered candidate pool; immutable after construction.

    Record order is identity: the positional index is the ranking tie-break
    and the binding key for embedding rows, so it must survive round trips.
    """

    records: tuple[CandidateRecord, ...]
    text_dim: int | None = None
    acoustic_dim: int | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def embedding_matrix(self, kind: str) -> np.ndarray:
        """Stacked (N, dim) float32 matrix of one embedding kind.

        Requires every record to carry that embedding (attach first).
        """
        _check_kind(kind)
        rows = []
        for i, rec in enumerate(self.records):
            vec = rec.text_embedding if kind == "text" else rec.acoustic_embedding
            if vec is None:
                raise DimMismatch(f"record {i} has no {kind} embedding attached")
            rows.append(vec.values)
        dim = self.text_dim if kind == "text" else self.acoustic_dim
        if not rows:
            return np.zeros((0, dim or 0), dtype=np.float32)
        return np.stack(rows)

    def usable_indices(self, exclude_ids: frozenset[str] | set[str] = frozenset()) -> list[int]:
        return [
            i
            for i, rec in enumerate(self.records)
            if rec.usable and rec.utterance_id not in exclude_ids
        ]


def _check_kind(kind: str) -> None:
    if kind not in KIND_CODES:
        raise ValueError(f"kind must be one of {sorted(KIND_CODES)}, got {kind!r}")


def ingest_manifest(manifest_path: str | Path) -> CandidateStore:
    """Build a store from a manifest; embeddings stay absent (pending).

    One record per line, order preserved. Raises ParseError with the
    offending line number, or DuplicateId.
    """
    path = Path(manifest_path)
    records: list[CandidateRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                raise ParseError("blank line", line=lineno)
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("record is not an object", line=lineno)
            try:
                rec = _record_from_obj(obj)
            except ParseError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if rec.utterance_id in seen:
                raise DuplicateId(rec.utterance_id)
            seen.add(rec.utterance_id)
            records.append(rec)
    return CandidateStore(records=tuple(records))


def _record_from_obj(obj: dict) -> CandidateRecord:
    for key in ("utterance_id", "audio_ref", "transcription"):
        if key not in obj:
            raise ParseError(f"missing key {key!r}")
        if not isinstance(obj[key], str):
            raise ParseError(f"key {key!r} must be a string")
    if obj["utterance_id"] == "":
        raise ParseError("utterance_id must be non-empty")
    split = obj.get("split")
    if split is not None and not isinstance(split, str):
        raise ParseError("key 'split' must be a string")
    return CandidateRecord(
        utterance_id=obj["utterance_id"],
        audio_ref=obj["audio_ref"],
        transcription=obj["transcription"],
        split=split,
    )


def write_embedding_file(
    vectors: Sequence[np.ndarray] | np.ndarray,
    dim: int,
    path: str | Path,
    kind: str = "text",
) -> None:
    """Write vectors as a binary embedding file (float32, row-major)."""
    _check_kind(kind)
    matrix = np.asarray(vectors, dtype=np.float32)
    if matrix.ndim == 1 and matrix.size == 0:
        matrix = matrix.reshape(0, dim)
    if matrix.ndim != 2 or matrix.shape[1] != dim:
        raise DimMismatch(f"expected shape (*, {dim}), got {matrix.shape}")
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, KIND_CODES[kind], DTYPE_FLOAT32, 0, dim, matrix.shape[0]
    )
    with Path(path).open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_embedding_header(path: str | Path) -> dict:
    """Parse and validate just the header; returns kind/dim/count/version."""
    with Path(path).open("rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        if len(raw) >= len(MAGIC) and raw[: len(MAGIC)] != MAGIC:
            raise BadMagic(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, kind_code, dtype, reserved, dim, count = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedVersion(f"{path}: dtype code {dtype}")
    if kind_code not in KIND_NAMES:
        raise ParseError(f"{path}: unknown kind code {kind_code}")
    if reserved != 0:
        raise ParseError(f"{path}: reserved field is {reserved}, expected 0")
    if dim < 1:
        raise DimMismatch(f"{path}: dim {dim} < 1")
    return {
        "kind": KIND_NAMES[kind_code],
        "dim": int(dim),
        "count": int(count),
        "version": int(version),
    }


def read_embedding_file(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a binary embedding file; returns ((count, dim) float32, dim).

    The payload round-trips bit-exactly against write_embedding_file.
    """
    header = read_embedding_header(path)
    dim, count = header["dim"], header["count"]
    expected = count * dim * 4
    with Path(path).open("rb") as fh:
        fh.seek(_HEADER.size)
        payload = fh.read()
    if len(payload) != expected:
        raise TruncatedFile(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    return matrix, dim


def attach_embeddings(
    store: CandidateStore, emb_path: str | Path, kind: str
) -> CandidateStore:
    """Bind embedding file rows to records by position; returns a new store.

    Rows whose norm drifts from 1 by more than NORM_TOLERANCE but less than
    RENORM_BAND are re-normalized (storage-precision drift); rows at or beyond
    the band raise NormalizationError, zero rows raise ZeroNorm.
    """
    _check_kind(kind)
    header = read_embedding_header(emb_path)
    if header["kind"] != kind:
        raise DimMismatch(
            f"{emb_path}: file holds {header['kind']} embeddings, expected {kind}"
        )
    matrix, dim = read_embedding_file(emb_path)
    if matrix.shape[0] != len(store):
        raise CountMismatch(
            f"{emb_path}: {matrix.shape[0]} rows for {len(store)} records"
        )
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    vectors: list[EmbeddingVector] = []
    for i in range(matrix.shape[0]):
        norm = float(norms[i])
        if norm < 1e-12:
            raise ZeroNorm(row=i)
        deviation = abs(norm - 1.0)
        if deviation <= NORM_TOLERANCE:
            vectors.append(EmbeddingVector(values=matrix[i], normalized=True))
        elif deviation < RENORM_BAND:
            vectors.append(l2_normalize(EmbeddingVector(values=matrix[i])))
        else:
            raise NormalizationError(row=i, norm=norm)
    attr = "text_embedding" if kind == "text" else "acoustic_embedding"
    new_records = tuple(
        dataclasses.replace(rec, **{attr: vec})
        for rec, vec in zip(store.records, vectors)
    )
    dims = {"text_dim": store.text_dim, "acoustic_dim": store.acoustic_dim}
    dims["text_dim" if kind == "text" else "acoustic_dim"] = dim
    return CandidateStore(records=new_records, metadata=dict(store.metadata), **dims)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of a full store check; report-only, the store is untouched."""

    n_records: int
    text_dim: int | None
    acoustic_dim: int | None
    violations: tuple[tuple[int, str], ...]
    unusable_records: tuple[int, ...]
    normalization_residuals: tuple[tuple[int, str, float], ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(store: CandidateStore) -> ValidationReport:
    """Check every store invariant and list each violation with its index."""
    violations: list[tuple[int, str]] = []
    unusable: list[int] = []
    residuals: list[tuple[int, str, float]] = []
    seen: dict[str, int] = {}
    for i, rec in enumerate(store.records):
        if rec.utterance_id == "":
            violations.append((i, "empty utterance_id"))
        elif rec.utterance_id in seen:
            violations.append((i, f"duplicate utterance_id {rec.utterance_id!r}"))
        else:
            seen[rec.utterance_id] = i
        if not rec.usable:
            unusable.append(i)
        for kind, vec, dim in (
            ("text", rec.text_embedding, store.text_dim),
            ("acoustic", rec.acoustic_embedding, store.acoustic_dim),
        ):
            if vec is None:
                if dim is not None:
                    violations.append((i, f"missing {kind} embedding"))
                continue
            if dim is not None and vec.dim != dim:
                violations.append((i, f"{kind} dim {vec.dim} != store dim {dim}"))
            norm = float(np.linalg.norm(vec.values.astype(np.float64)))
            deviation = abs(norm - 1.0)
            if deviation > NORM_TOLERANCE:
                residuals.append((i, kind, deviation))
                violations.append((i, f"{kind} embedding norm {norm:.6g} not unit"))
    return ValidationReport(
        n_records=len(store),
        text_dim=store.text_dim,
        acoustic_dim=store.acoustic_dim,
        violations=tuple(violations),
        unusable_records=tuple(unusable),
        normalization_residuals=tuple(residuals),
    )


STORE_FILE = "store.json"
TEXT_EMB_FILE = "text.emb"
ACOUSTIC_EMB_FILE = "acoustic.emb"


def save_store(store: CandidateStore, directory: str | Path) -> Path:
    """Persist a store as a self-contained directory.

    store.json carries records and metadata; embeddings go to sibling binary
    files so the float32 payload round-trips bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": "ticl-store",
        "version": 1,
        "metadata": store.metadata,
        "text_dim": store.text_dim,
        "acoustic_dim": store.acoustic_dim,
        "text_embeddings": TEXT_EMB_FILE if store.text_dim is not None else None,
        "acoustic_embeddings": ACOUSTIC_EMB_FILE if store.acoustic_dim is not None else None,
        "records": [
            {
                "utterance_id": r.utterance_id,
                "audio_ref": r.audio_ref,
                "transcription": r.transcription,
                **({"split": r.split} if r.split is not None else {}),
            }
            for r in store.records
        ],
    }
    if store.text_dim is not None:
        write_embedding_file(
            store.embedding_matrix("text"), store.text_dim, directory / TEXT_EMB_FILE, "text"
        )
    if store.acoustic_dim is not None:
        write_embedding_file(
            store.embedding_matrix("acoustic"),
            store.acoustic_dim,
            directory / ACOUSTIC_EMB_FILE,
            "acoustic",
        )
    out = directory / STORE_FILE
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_store(directory: str | Path) -> CandidateStore:
    """Load a store directory written by save_store."""
    directory = Path(directory)
    doc_path = directory / STORE_FILE
    if not doc_path.exists():
        raise ParseError(f"{doc_path} does not exist")
    doc = json.loads(doc_path.read_text(encoding="utf-8"))
    if doc.get("format") != "ticl-store":
        raise ParseError(f"{doc_path}: not a ticl store document")
    if doc.get("version") != 1:
        raise UnsupportedVersion(f"{doc_path}: store version {doc.get('version')}")
    records = tuple(_record_from_obj(obj) for obj in doc["records"])
    store = CandidateStore(records=records, metadata=dict(doc.get("metadata", {})))
    for kind, key in (("text", "text_embeddings"), ("acoustic", "acoustic_embeddings")):
        rel = doc.get(key)
        if rel is not None:
            store = attach_embeddings(store, directory / rel, kind)
    return store


def records_to_manifest(records: Iterable[CandidateRecord], path: str | Path) -> None:
    """Write records back out in the manifest format (used by demos/tests)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "utterance_id": r.utterance_id,
                "audio_ref": r.audio_ref,
                "transcription": r.transcription,
            }
            if r.split is not None:
                obj["split"] = r.split
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
