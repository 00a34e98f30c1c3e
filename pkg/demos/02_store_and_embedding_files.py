"""
Candidate stores and the binary embedding format
================================================

A candidate store binds a JSONL manifest (one utterance per line) to
precomputed embedding files by position: row i belongs to manifest line i.
This script builds a small store from scratch, attaches text and acoustic
embeddings, validates it, and shows that the on-disk format round-trips
bit-exactly.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from ticl import (
    attach_embeddings,
    ingest_manifest,
    load_store,
    read_embedding_file,
    save_store,
    validate,
    write_embedding_file,
)

workdir = Path(tempfile.mkdtemp(prefix="ticl-demo-"))
rng = np.random.default_rng(1)

# A manifest is plain JSONL with utterance_id / audio_ref / transcription.
manifest = workdir / "candidates.jsonl"
with manifest.open("w") as fh:
    for i in range(5):
        fh.write(
            json.dumps(
                {
                    "utterance_id": f"u{i}",
                    "audio_ref": f"audio/u{i}.wav",
                    "transcription": f"spoken words number {i}",
                }
            )
            + "\n"
        )

store = ingest_manifest(manifest)
print("ingested", len(store), "records; dims pending:", store.text_dim, store.acoustic_dim)

# Embedding files carry a fixed header (magic, version, kind, dtype, dim,
# count) followed by packed little-endian float32 rows.
def unit_rows(n, dim):
    rows = rng.normal(size=(n, dim))
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32)

text_path = workdir / "text.emb"
acoustic_path = workdir / "acoustic.emb"
write_embedding_file(unit_rows(5, 12), 12, text_path, kind="text")
write_embedding_file(unit_rows(5, 8), 8, acoustic_path, kind="acoustic")

store = attach_embeddings(store, text_path, "text")
store = attach_embeddings(store, acoustic_path, "acoustic")
print("attached: text_dim", store.text_dim, "acoustic_dim", store.acoustic_dim)

report = validate(store)
print("validate:", len(report.violations), "violations,",
      len(report.unusable_records), "unusable records")

# Round trips are bit-exact: the payload is stored float32, read back float32.
rows, dim = read_embedding_file(text_path)
write_embedding_file(rows, dim, workdir / "copy.emb", kind="text")
print("payload bit-exact:", (workdir / "copy.emb").read_bytes() == text_path.read_bytes())

# Stores persist as a self-contained directory and reload field-for-field.
store_dir = workdir / "store"
save_store(store, store_dir)
reloaded = load_store(store_dir)
print("store round trip equal:", reloaded.records == store.records)
print("artifacts in", workdir)
