"""Shared fixture builders and the acceptance summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from ticl.geometry import EmbeddingVector, l2_normalize
from ticl.store import CandidateRecord, CandidateStore


def unit(values) -> EmbeddingVector:
    return l2_normalize(EmbeddingVector(np.asarray(values, dtype=np.float32)))


def make_store(
    text_rows: np.ndarray,
    acoustic_rows: np.ndarray,
    transcriptions: list[str] | None = None,
    metadata: dict | None = None,
) -> CandidateStore:
    """Store with planted unit-normalized embeddings, ids u0..u{n-1}."""
    n = text_rows.shape[0]
    assert acoustic_rows.shape[0] == n
    if transcriptions is None:
        transcriptions = [f"text for candidate {i}" for i in range(n)]
    records = tuple(
        CandidateRecord(
            utterance_id=f"u{i}",
            audio_ref=f"audio/u{i}.wav",
            transcription=transcriptions[i],
            text_embedding=unit(text_rows[i]),
            acoustic_embedding=unit(acoustic_rows[i]),
        )
        for i in range(n)
    )
    return CandidateStore(
        records=records,
        text_dim=text_rows.shape[1],
        acoustic_dim=acoustic_rows.shape[1],
        metadata=metadata or {},
    )


def random_unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260809)


# ---------------------------------------------------------------------------
# Acceptance summary: one pass/fail line per criterion after the run.

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
