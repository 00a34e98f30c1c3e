"""
Two-stage retrieval: semantic pool, acoustic rerank
===================================================

Why rerank at all? The pseudo-label that drives semantic retrieval is a
guess from a frozen ASR model, and candidates whose transcriptions embed
near a wrong guess can still sound nothing like the test speaker. This
script plants a pool where the semantically nearest candidates are
acoustically far, and shows how the second stage flips the selection.
"""

import numpy as np

from ticl import CandidateRecord, CandidateStore, EmbeddingVector, RetrievalConfig, TestQuery
from ticl import l2_normalize, retrieve_ticl, retrieve_ticl_plus

rng = np.random.default_rng(2)


def unit(values):
    return l2_normalize(EmbeddingVector(np.asarray(values, dtype=np.float32)))


# Text space: everything sits close to the query direction [1, 0], with the
# "far" group slightly closer than the "near" group. Acoustic space: the far
# group points away from the test audio, the near group right at it.
candidates = []
for j in range(3):
    candidates.append(
        CandidateRecord(
            utterance_id=f"far{j}",
            audio_ref=f"audio/far{j}.wav",
            transcription=f"far group text {j}",
            text_embedding=unit([1.0, 0.01 * (j + 1)]),
            acoustic_embedding=unit([-1.0, 0.05 * j, 0.0]),
        )
    )
for j in range(3):
    candidates.append(
        CandidateRecord(
            utterance_id=f"near{j}",
            audio_ref=f"audio/near{j}.wav",
            transcription=f"near group text {j}",
            text_embedding=unit([1.0, 0.08 + 0.01 * j]),
            acoustic_embedding=unit([1.0, 0.03 * (j + 1), 0.0]),
        )
    )
store = CandidateStore(records=tuple(candidates), text_dim=2, acoustic_dim=3)

query = TestQuery(
    utterance_id="test",
    audio_ref="audio/test.wav",
    pseudo_label="a rough pseudo label",
    text_embedding=unit([1.0, 0.0]),
    acoustic_embedding=unit([1.0, 0.0, 0.0]),
)

config = RetrievalConfig(M=6, K=2, ordering="similar_first")

single = retrieve_ticl(store, query, config)
print("single-stage picks: ", [ex.utterance_id for ex in single.examples])

two_stage = retrieve_ticl_plus(store, query, config)
print("two-stage picks:    ", [ex.utterance_id for ex in two_stage.examples])
for ex in two_stage.examples:
    print(
        f"  {ex.utterance_id}: semantic {ex.semantic_distance:.4f}"
        f"  acoustic {ex.acoustic_distance:.4f}"
    )

# The demonstration ordering is configurable; similar_last puts the most
# similar example immediately before the test query in the context.
last = retrieve_ticl_plus(store, query, RetrievalConfig(M=6, K=2, ordering="similar_last"))
print("similar_last order: ", [ex.utterance_id for ex in last.examples])
