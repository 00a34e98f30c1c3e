"""Two-stage in-context example retrieval and context assembly.

Stage 1 ranks the candidate pool by Euclidean distance between the test
utterance's pseudo-label embedding and each candidate's text embedding, and
keeps the closest M (default 300). Stage 2 reranks that pool by distance
between normalized speech embeddings and keeps the closest K, so the selected
demonstrations are both lexically related and acoustically similar to the
test utterance. The single-stage variant stops after stage 1 with a pool of
size K.

Everything here is a pure function of (store, query, config): no caching, no
hidden state, exhaustive scans over the pool. Candidate sets in this domain
are small enough that exact search is the honest implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .errors import (
    ConfigError,
    DimMismatch,
    EmptyStageOne,
    EmptyStore,
    MissingPseudoLabelEmbedding,
    ParseError,
)
from .geometry import EmbeddingVector, RankedCandidate, distances_to, top_k
from .store import CandidateStore

if TYPE_CHECKING:
    from .providers import SiclModelProvider

ORDERINGS = ("similar_last", "similar_first", "stage1_order")
DEFAULT_POOL_SIZE = 300

# Provenance warning recorded when stage 1 is skipped for lack of a
# pseudo-label and the rerank runs over the whole usable pool instead.
ACOUSTIC_FALLBACK_WARNING = "pseudo-label empty: acoustic-only retrieval over full pool"


@dataclass(frozen=True)
class RetrievalConfig:
    """Pool size M, context size K, demonstration ordering, exclusions."""

    M: int = DEFAULT_POOL_SIZE
    K: int = 1
    ordering: str = "similar_last"
    exclude_ids: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not (1 <= self.K <= self.M):
            raise ConfigError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        object.__setattr__(self, "exclude_ids", frozenset(self.exclude_ids))


@dataclass(frozen=True)
class TestQuery:
    """One test utterance prepared for retrieval.

    The acoustic embedding is always present; the text embedding exists
    exactly when the pseudo-label is non-empty (a failed pseudo-labeler
    yields empty text and no embedding).
    """

    utterance_id: str
    audio_ref: str
    pseudo_label: str
    acoustic_embedding: EmbeddingVector
    text_embedding: EmbeddingVector | None = None

    def __post_init__(self) -> None:
        if not self.acoustic_embedding.normalized:
            raise ConfigError("query acoustic embedding must be normalized")
        has_label = self.pseudo_label.strip() != ""
        if has_label != (self.text_embedding is not None):
            raise ConfigError(
                "text_embedding must be present exactly when pseudo_label is non-empty"
            )


@dataclass(frozen=True)
class RerankedCandidate(RankedCandidate):
    """Stage-2 entry: distance is acoustic, stage-1 distance rides along."""

    semantic_distance: float | None = None


@dataclass(frozen=True)
class ContextExample:
    """One demonstration with its retrieval provenance."""

    utterance_id: str
    audio_ref: str
    answer_text: str
    semantic_distance: float | None
    acoustic_distance: float | None
    stage1_rank: int


@dataclass(frozen=True)
class ContextBundle:
    """The assembled context: ordered demonstrations plus the test audio."""

    test_utterance_id: str
    test_audio_ref: str
    examples: tuple[ContextExample, ...]
    ordering: str
    m: int
    k: int
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ids = [ex.utterance_id for ex in self.examples]
        if len(ids) != len(set(ids)):
            raise ConfigError("duplicate example ids in bundle")
        if self.test_utterance_id in ids:
            raise ConfigError("test utterance leaked into its own context")
        if len(self.examples) > self.k:
            raise ConfigError(f"{len(self.examples)} examples exceed K={self.k}")


def _query_distances(
    store: CandidateStore,
    query_vec: EmbeddingVector,
    kind: str,
    indices: Sequence[int],
) -> list[float]:
    matrix = store.embedding_matrix(kind)
    store_dim = store.text_dim if kind == "text" else store.acoustic_dim
    if store_dim != query_vec.dim:
        raise DimMismatch(
            f"store {kind} dim {store_dim} != query dim {query_vec.dim}"
        )
    dists = distances_to(query_vec, matrix[list(indices)])
    return [float(d) for d in dists]


def semantic_candidates(
    store: CandidateStore,
    query: TestQuery,
    m: int,
    exclude_ids: frozenset[str] = frozenset(),
) -> list[RankedCandidate]:
    """Stage 1: the min(m, usable) candidates closest in text-embedding space.

    Unusable records (empty transcription), excluded ids, and the test
    utterance itself are filtered out before ranking. Ascending distance,
    ties by candidate index.
    """
    if query.text_embedding is None:
        raise MissingPseudoLabelEmbedding(
            f"query {query.utterance_id!r} has no pseudo-label embedding"
        )
    if m < 1:
        raise ConfigError("pool size m must be >= 1")
    excluded = set(exclude_ids) | {query.utterance_id}
    indices = store.usable_indices(excluded)
    if not indices:
        raise EmptyStore("no usable candidates after exclusions")
    dists = _query_distances(store, query.text_embedding, "text", indices)
    ranked = [RankedCandidate(i, d) for i, d in zip(indices, dists)]
    return top_k(ranked, m)


def acoustic_rerank(
    stage1: Sequence[RankedCandidate],
    store: CandidateStore,
    query: TestQuery,
    k: int,
) -> list[RerankedCandidate]:
    """Stage 2: rerank the stage-1 pool by acoustic distance, keep top K.

    The result is a subset of stage1; each entry keeps its stage-1 distance
    for provenance and is ranked purely by the acoustic one.
    """
    if not stage1:
        raise EmptyStageOne("acoustic rerank needs a non-empty stage-1 pool")
    if k < 1:
        raise ConfigError("k must be >= 1")
    indices = [c.candidate_index for c in stage1]
    dists = _query_distances(store, query.acoustic_embedding, "acoustic", indices)
    reranked = [
        RerankedCandidate(
            candidate_index=c.candidate_index,
            distance=d,
            semantic_distance=c.distance,
        )
        for c, d in zip(stage1, dists)
    ]
    return top_k(reranked, k)  # type: ignore[return-value]


def acoustic_candidates(
    store: CandidateStore,
    query: TestQuery,
    k: int,
    exclude_ids: frozenset[str] = frozenset(),
) -> list[RerankedCandidate]:
    """Acoustic-only ranking over the whole usable pool (fallback path)."""
    excluded = set(exclude_ids) | {query.utterance_id}
    indices = store.usable_indices(excluded)
    if not indices:
        raise EmptyStore("no usable candidates after exclusions")
    dists = _query_distances(store, query.acoustic_embedding, "acoustic", indices)
    ranked = [
        RerankedCandidate(candidate_index=i, distance=d, semantic_distance=None)
        for i, d in zip(indices, dists)
    ]
    return top_k(ranked, k)  # type: ignore[return-value]


def assemble_context(
    selections: Sequence[ContextExample],
    ordering: str,
    test_audio_ref: str,
    test_utterance_id: str,
    m: int,
    k: int,
    warnings: Sequence[str] = (),
) -> ContextBundle:
    """Order the selected demonstrations and wrap them with the test audio.

    `selections` arrive in final-rank order (most similar first).
    similar_last reverses them so the most similar example sits immediately
    before the test query; similar_first keeps them as ranked; stage1_order
    sorts by stage-1 rank. Empty selections produce a zero-shot bundle.
    """
    if ordering not in ORDERINGS:
        raise ConfigError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    if ordering == "similar_last":
        examples = tuple(reversed(selections))
    elif ordering == "similar_first":
        examples = tuple(selections)
    else:
        examples = tuple(sorted(selections, key=lambda ex: ex.stage1_rank))
    return ContextBundle(
        test_utterance_id=test_utterance_id,
        test_audio_ref=test_audio_ref,
        examples=examples,
        ordering=ordering,
        m=m,
        k=k,
        warnings=tuple(warnings),
    )


def _stage1_examples(
    store: CandidateStore, ranked: Sequence[RankedCandidate]
) -> list[ContextExample]:
    out = []
    for rank, cand in enumerate(ranked):
        rec = store.records[cand.candidate_index]
        out.append(
            ContextExample(
                utterance_id=rec.utterance_id,
                audio_ref=rec.audio_ref,
                answer_text=rec.transcription,
                semantic_distance=cand.distance,
                acoustic_distance=None,
                stage1_rank=rank,
            )
        )
    return out


def retrieve_ticl(
    store: CandidateStore, query: TestQuery, config: RetrievalConfig
) -> ContextBundle:
    """Single-stage retrieval: the K semantically closest demonstrations.

    There is no fallback here: an empty pseudo-label is an error, because
    without it this method has nothing to rank by.
    """
    ranked = semantic_candidates(store, query, config.K, config.exclude_ids)
    examples = _stage1_examples(store, ranked)
    return assemble_context(
        examples, config.ordering, query.audio_ref, query.utterance_id, config.M, config.K
    )


def retrieve_ticl_plus(
    store: CandidateStore, query: TestQuery, config: RetrievalConfig
) -> ContextBundle:
    """Two-stage retrieval: semantic top-M, then acoustic top-K.

    With an empty pseudo-label the semantic stage is skipped and the rerank
    runs over every usable candidate; the bundle records a warning so the
    degraded path is visible in provenance.
    """
    warnings: tuple[str, ...] = ()
    if query.text_embedding is not None:
        stage1 = semantic_candidates(store, query, config.M, config.exclude_ids)
        # stage1_rank must reflect stage-1 order, not the reranked order.
        stage1_rank = {c.candidate_index: r for r, c in enumerate(stage1)}
        reranked = acoustic_rerank(stage1, store, query, config.K)
    else:
        reranked = acoustic_candidates(store, query, config.K, config.exclude_ids)
        stage1_rank = {c.candidate_index: r for r, c in enumerate(reranked)}
        warnings = (ACOUSTIC_FALLBACK_WARNING,)
    examples = [
        ContextExample(
            utterance_id=store.records[c.candidate_index].utterance_id,
            audio_ref=store.records[c.candidate_index].audio_ref,
            answer_text=store.records[c.candidate_index].transcription,
            semantic_distance=c.semantic_distance,
            acoustic_distance=c.distance,
            stage1_rank=stage1_rank[c.candidate_index],
        )
        for c in reranked
    ]
    return assemble_context(
        examples,
        config.ordering,
        query.audio_ref,
        query.utterance_id,
        config.M,
        config.K,
        warnings=warnings,
    )


def zero_shot_bundle(query: TestQuery, config: RetrievalConfig) -> ContextBundle:
    """An empty context for the baseline path."""
    return assemble_context(
        [], config.ordering, query.audio_ref, query.utterance_id, config.M, config.K
    )


def transcribe_with_context(model: "SiclModelProvider", bundle: ContextBundle) -> str:
    """Ask the in-context model for a hypothesis given the assembled bundle.

    Provider failures surface as ProviderError; the evaluation harness
    records them per utterance instead of aborting a run.
    """
    return model.generate(bundle)


def bundle_to_dict(bundle: ContextBundle) -> dict:
    doc = {
        "test_utterance_id": bundle.test_utterance_id,
        "test_audio_ref": bundle.test_audio_ref,
        "examples": [
            {
                "audio_ref": ex.audio_ref,
                "text": ex.answer_text,
                "utterance_id": ex.utterance_id,
                "semantic_distance": ex.semantic_distance,
                "acoustic_distance": ex.acoustic_distance,
            }
            for ex in bundle.examples
        ],
        "ordering": bundle.ordering,
        "config": {"M": bundle.m, "K": bundle.k},
    }
    if bundle.warnings:
        doc["warnings"] = list(bundle.warnings)
    return doc


def bundle_to_json_line(bundle: ContextBundle) -> str:
    return json.dumps(bundle_to_dict(bundle), ensure_ascii=False)


def bundle_from_dict(doc: dict) -> ContextBundle:
    try:
        examples = tuple(
            ContextExample(
                utterance_id=ex["utterance_id"],
                audio_ref=ex["audio_ref"],
                answer_text=ex["text"],
                semantic_distance=ex["semantic_distance"],
                acoustic_distance=ex["acoustic_distance"],
                stage1_rank=rank,
            )
            for rank, ex in enumerate(doc["examples"])
        )
        return ContextBundle(
            test_utterance_id=doc["test_utterance_id"],
            test_audio_ref=doc["test_audio_ref"],
            examples=examples,
            ordering=doc["ordering"],
            m=doc["config"]["M"],
            k=doc["config"]["K"],
            warnings=tuple(doc.get("warnings", ())),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed bundle record: {exc}") from exc


def bundle_from_json_line(line: str) -> ContextBundle:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}") from exc
    return bundle_from_dict(doc)
