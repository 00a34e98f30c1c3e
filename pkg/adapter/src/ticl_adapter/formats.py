"""Writers and readers for the retrieval engine's on-disk contracts.

Implemented here from the format documentation on purpose: this package
talks to the retrieval engine only through its external interfaces (the
manifest and embedding file formats and the HTTP wire protocol), never
through its Python API, so the formats are re-implemented rather than
imported. The engine's own validator is the conformance check.

Embedding file layout (little-endian, no padding):
magic "TICLEMB1" (8) | u32 version=1 | u8 kind (1 text, 2 acoustic)
| u8 dtype=1 (float32) | u16 reserved=0 | u32 dim | u64 count
| count * dim float32 rows.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"TICLEMB1"
VERSION = 1
KIND_CODES = {"text": 1, "acoustic": 2}
_HEADER = struct.Struct("<8sIBBHIQ")


class FormatError(ValueError):
    pass


def write_embeddings(matrix: np.ndarray, path: str | Path, kind: str) -> None:
    if kind not in KIND_CODES:
        raise FormatError(f"kind must be text or acoustic, got {kind!r}")
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise FormatError(f"expected a 2-d matrix, got shape {matrix.shape}")
    header = _HEADER.pack(
        MAGIC, VERSION, KIND_CODES[kind], 1, 0, matrix.shape[1], matrix.shape[0]
    )
    with Path(path).open("wb") as fh:
        fh.write(header)
        fh.write(matrix.tobytes())


def read_embeddings(path: str | Path) -> tuple[np.ndarray, str]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: too short for a header")
    magic, version, kind_code, dtype, reserved, dim, count = _HEADER.unpack(
        raw[: _HEADER.size]
    )
    if magic != MAGIC or version != VERSION or dtype != 1 or reserved != 0:
        raise FormatError(f"{path}: bad header")
    kind = {code: name for name, code in KIND_CODES.items()}.get(kind_code)
    if kind is None:
        raise FormatError(f"{path}: unknown kind code {kind_code}")
    payload = raw[_HEADER.size :]
    if len(payload) != count * dim * 4:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy(), kind


def read_manifest(path: str | Path) -> list[dict]:
    """Manifest rows in file order; each needs utterance_id/audio_ref/transcription."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            for key in ("utterance_id", "audio_ref", "transcription"):
                if not isinstance(obj.get(key), str):
                    raise FormatError(f"{path}:{lineno}: missing or non-string {key!r}")
            rows.append(obj)
    return rows


def write_pseudo_labels(rows: Iterable[tuple[str, str]], path: str | Path) -> None:
    """JSONL of {"utterance_id", "text"}, the ASR file-backend table."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for utterance_id, text in rows:
            fh.write(
                json.dumps({"utterance_id": utterance_id, "text": text}, ensure_ascii=False)
                + "\n"
            )
