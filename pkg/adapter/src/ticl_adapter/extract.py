"""Batch extraction: manifest in, embedding files and pseudo-labels out.

Output rows bind to manifest lines by position, so a failed row (missing or
unreadable audio) is never dropped: it becomes an all-zero embedding row and
an entry in the sidecar error file. The downstream ingest rejects zero rows
loudly, which is the intended failure mode; a clean extraction passes the
engine's validation with no warnings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import read_manifest, write_embeddings, write_pseudo_labels
from .models import POOLINGS, build_asr, build_speech_encoder, build_text_encoder

TEXT_EMB_FILE = "text.emb"
ACOUSTIC_EMB_FILE = "acoustic.emb"
PSEUDO_LABEL_FILE = "pseudo_labels.jsonl"
ERROR_SIDECAR_FILE = "errors.jsonl"
META_FILE = "extraction_meta.json"


@dataclass(frozen=True)
class ExtractionJob:
    manifest_path: str
    output_dir: str
    text_model: str = "stub:0"
    speech_model: str = "stub:0"
    asr_model: str = "stub:0"
    pooling: str = "mean"
    layer: str = "final"
    text_dim: int = 16
    acoustic_dim: int = 24
    batch_size: int = 16
    device: str | None = None
    audio_root: str | None = None
    # extract pseudo-labels for rows whose transcription is empty or always
    pseudo_label_all: bool = True

    def __post_init__(self) -> None:
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ExtractionResult:
    text_embeddings: Path
    acoustic_embeddings: Path
    pseudo_labels: Path
    meta: Path
    errors: Path | None
    n_rows: int
    failed_rows: list[int] = field(default_factory=list)


def _resolve_audio(job: ExtractionJob, audio_ref: str) -> Path:
    path = Path(audio_ref)
    if not path.is_absolute() and job.audio_root:
        path = Path(job.audio_root) / path
    return path


def extract(job: ExtractionJob) -> ExtractionResult:
    rows = read_manifest(job.manifest_path)
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    text_encoder = build_text_encoder(job.text_model, dim=job.text_dim, device=job.device)
    speech_encoder = build_speech_encoder(
        job.speech_model, dim=job.acoustic_dim, layer=job.layer, device=job.device
    )
    asr = build_asr(job.asr_model, device=job.device)

    n = len(rows)
    text_matrix = np.zeros((n, text_encoder.dim), dtype=np.float32)
    acoustic_matrix = np.zeros((n, speech_encoder.dim), dtype=np.float32)
    pseudo_labels: list[tuple[str, str]] = []
    errors: list[dict] = []

    for start in range(0, n, job.batch_size):
        batch = list(range(start, min(start + job.batch_size, n)))
        texts = [rows[i]["transcription"] for i in batch]
        encoded = text_encoder.encode(texts)
        for offset, i in enumerate(batch):
            text_matrix[i] = encoded[offset]

    for i, row in enumerate(rows):
        audio_path = _resolve_audio(job, row["audio_ref"])
        try:
            if not audio_path.exists():
                raise FileNotFoundError(f"audio file not found: {audio_path}")
            acoustic_matrix[i] = speech_encoder.encode_file(audio_path, job.pooling)
            if job.pseudo_label_all or not row["transcription"].strip():
                pseudo_labels.append((row["utterance_id"], asr.transcribe_file(audio_path)))
        except Exception as exc:
            # zero-flagged row: positional binding survives, ingest will reject
            acoustic_matrix[i] = 0.0
            pseudo_labels.append((row["utterance_id"], ""))
            errors.append(
                {
                    "row": i,
                    "utterance_id": row["utterance_id"],
                    "audio_ref": row["audio_ref"],
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )

    text_path = out_dir / TEXT_EMB_FILE
    acoustic_path = out_dir / ACOUSTIC_EMB_FILE
    labels_path = out_dir / PSEUDO_LABEL_FILE
    write_embeddings(text_matrix, text_path, "text")
    write_embeddings(acoustic_matrix, acoustic_path, "acoustic")
    write_pseudo_labels(pseudo_labels, labels_path)

    errors_path: Path | None = None
    if errors:
        errors_path = out_dir / ERROR_SIDECAR_FILE
        with errors_path.open("w", encoding="utf-8") as fh:
            for entry in errors:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    meta_path = out_dir / META_FILE
    meta = {
        "manifest": str(job.manifest_path),
        "text_model": job.text_model,
        "speech_model": job.speech_model,
        "asr_model": job.asr_model,
        "pooling": job.pooling,
        "layer": job.layer,
        "text_dim": int(text_encoder.dim),
        "acoustic_dim": int(speech_encoder.dim),
        "batch_size": job.batch_size,
        "rows": n,
        "failed_rows": [e["row"] for e in errors],
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    return ExtractionResult(
        text_embeddings=text_path,
        acoustic_embeddings=acoustic_path,
        pseudo_labels=labels_path,
        meta=meta_path,
        errors=errors_path,
        n_rows=n,
        failed_rows=[e["row"] for e in errors],
    )
