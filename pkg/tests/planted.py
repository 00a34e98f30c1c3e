"""Planted two-cluster fixture for end-to-end tests.

For each test utterance t the candidate pool holds two groups:

- far group: the semantically NEAREST candidates (tiny text-embedding noise
  around the query direction) whose acoustic embeddings sit ~120 degrees away
  from the test audio embedding (chord ~1.73),
- near group: slightly farther semantically, but acoustically right next to
  the test embedding.

Single-stage retrieval therefore picks acoustically-far examples at every k,
while the two-stage pipeline reranks to the near group. Together with the
similarity-noise generation mock (substitution rate proportional to mean
acoustic distance; an empty context counts as distance 2.0) this forces
zero-shot WER > single-stage WER > two-stage WER at every k, deterministically.

Everything is written to disk in the real formats and wired through a config
document with file-backed providers, so end-to-end runs exercise manifests,
embedding files and the provider contracts, not in-memory shortcuts.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ticl.store import write_embedding_file

TEXT_DIM = 16
ACOUSTIC_DIM = 32
FAR_PER_CLUSTER = 4
NEAR_PER_CLUSTER = 4
WORDS_PER_REFERENCE = 12
NOISE_SCALE = 0.45


def _unit(v: np.ndarray) -> np.ndarray:
    return (v / np.linalg.norm(v)).astype(np.float32)


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def build_planted_fixture(
    directory: str | Path,
    n_tests: int = 6,
    seed: int = 2025,
    noise_scale: float = NOISE_SCALE,
) -> Path:
    """Write the fixture and its config document; returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    cand_rows: list[dict] = []
    cand_text: list[np.ndarray] = []
    cand_acoustic: list[np.ndarray] = []
    test_rows: list[dict] = []
    test_text: list[np.ndarray] = []
    test_acoustic: list[np.ndarray] = []
    pseudo_rows: list[dict] = []

    for t in range(n_tests):
        text_dir = _unit(rng.normal(size=TEXT_DIM))
        acoustic_near = _unit(rng.normal(size=ACOUSTIC_DIM))
        # a direction ~120 degrees from acoustic_near: chord length ~1.73
        ortho = rng.normal(size=ACOUSTIC_DIM)
        ortho -= ortho.dot(acoustic_near) * acoustic_near
        ortho = _unit(ortho)
        acoustic_far = _unit(-0.5 * acoustic_near + np.sqrt(3.0) / 2.0 * ortho)

        test_id = f"t{t}"
        reference = " ".join(f"story{t}word{i}" for i in range(WORDS_PER_REFERENCE))
        test_rows.append(
            {
                "utterance_id": test_id,
                "audio_ref": f"audio/{test_id}.wav",
                "transcription": reference,
            }
        )
        test_text.append(text_dir)
        test_acoustic.append(acoustic_near)
        pseudo_rows.append({"utterance_id": test_id, "text": f"rough guess {t}"})

        for j in range(FAR_PER_CLUSTER):
            uid = f"c{t}far{j}"
            cand_rows.append(
                {
                    "utterance_id": uid,
                    "audio_ref": f"audio/{uid}.wav",
                    "transcription": f"far candidate {t} {j} words here",
                }
            )
            # semantically nearest: noise scale grows with j, all below near group
            cand_text.append(_unit(text_dir + 0.010 * (j + 1) * rng.normal(size=TEXT_DIM)))
            cand_acoustic.append(_unit(acoustic_far + 0.02 * rng.normal(size=ACOUSTIC_DIM)))
        for j in range(NEAR_PER_CLUSTER):
            uid = f"c{t}near{j}"
            cand_rows.append(
                {
                    "utterance_id": uid,
                    "audio_ref": f"audio/{uid}.wav",
                    "transcription": f"near candidate {t} {j} words here",
                }
            )
            cand_text.append(_unit(text_dir + (0.08 + 0.010 * j) * rng.normal(size=TEXT_DIM)))
            cand_acoustic.append(_unit(acoustic_near + 0.02 * rng.normal(size=ACOUSTIC_DIM)))

    _write_jsonl(directory / "candidates.jsonl", cand_rows)
    _write_jsonl(directory / "tests.jsonl", test_rows)
    _write_jsonl(directory / "pseudo_labels.jsonl", pseudo_rows)
    write_embedding_file(np.stack(cand_text), TEXT_DIM, directory / "cand_text.emb", "text")
    write_embedding_file(
        np.stack(cand_acoustic), ACOUSTIC_DIM, directory / "cand_acoustic.emb", "acoustic"
    )
    write_embedding_file(np.stack(test_text), TEXT_DIM, directory / "test_text.emb", "text")
    write_embedding_file(
        np.stack(test_acoustic), ACOUSTIC_DIM, directory / "test_acoustic.emb", "acoustic"
    )

    config = {
        "dataset": "planted",
        "store": {
            "manifest": "candidates.jsonl",
            "text_embeddings": "cand_text.emb",
            "acoustic_embeddings": "cand_acoustic.emb",
            "metadata": {"corpus": "planted", "pooling": "synthetic"},
        },
        "test_manifest": "tests.jsonl",
        "providers": {
            "text_embedder": {
                "backend": "precomputed_file",
                "endpoint_or_path": "test_text.emb",
                "dim": TEXT_DIM,
                "options": {"ids_manifest": "tests.jsonl"},
            },
            "acoustic_embedder": {
                "backend": "precomputed_file",
                "endpoint_or_path": "test_acoustic.emb",
                "dim": ACOUSTIC_DIM,
                "options": {"ids_manifest": "tests.jsonl"},
            },
            "asr": {
                "backend": "precomputed_file",
                "endpoint_or_path": "pseudo_labels.jsonl",
            },
            "sicl_model": {
                "backend": "mock",
                "seed": 7,
                "options": {
                    "policy": "similarity_noise",
                    "noise_scale": noise_scale,
                    "references_manifest": "tests.jsonl",
                    "acoustic_tables": [
                        {"manifest": "candidates.jsonl", "embeddings": "cand_acoustic.emb"},
                        {"manifest": "tests.jsonl", "embeddings": "test_acoustic.emb"},
                    ],
                },
            },
        },
        "retrieval": {"M": 300, "K": 2, "ordering": "similar_last"},
        "eval": {
            "methods": ["zero_shot", "ticl", "ticl_plus"],
            "k_values": [1, 2, 3, 4],
            "M": 300,
            "text_norm": "default",
            "seed": 7,
        },
        "jobs": 2,
    }
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return config_path
