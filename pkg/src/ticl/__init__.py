"""Two-stage in-context example retrieval for speech recognition.

Semantic KNN over normalized text embeddings selects a candidate pool,
acoustic reranking over speech embeddings refines it, and an evaluation
harness scores the resulting transcriptions by word error rate.
"""

__version__ = "0.1.0"

from .geometry import (
    EmbeddingVector,
    RankedCandidate,
    euclidean_distance,
    l2_normalize,
    top_k,
)
from .harness import (
    EvalConfig,
    EvalReport,
    compute_delta_rel,
    parse_report_csv,
    prepare_query,
    render_report,
    run_sweep,
)
from .metrics import (
    EditCounts,
    corpus_wer,
    normalize_text,
    relative_reduction,
    word_error_rate,
)
from .providers import ProviderSet, ProviderSpec, build_provider
from .retrieval import (
    ContextBundle,
    ContextExample,
    RetrievalConfig,
    TestQuery,
    acoustic_rerank,
    assemble_context,
    bundle_from_json_line,
    bundle_to_json_line,
    retrieve_ticl,
    retrieve_ticl_plus,
    semantic_candidates,
    transcribe_with_context,
    zero_shot_bundle,
)
from .store import (
    CandidateRecord,
    CandidateStore,
    attach_embeddings,
    ingest_manifest,
    load_store,
    read_embedding_file,
    save_store,
    validate,
    write_embedding_file,
)

__all__ = [
    "EmbeddingVector",
    "RankedCandidate",
    "euclidean_distance",
    "l2_normalize",
    "top_k",
    "EvalConfig",
    "EvalReport",
    "compute_delta_rel",
    "parse_report_csv",
    "prepare_query",
    "render_report",
    "run_sweep",
    "EditCounts",
    "corpus_wer",
    "normalize_text",
    "relative_reduction",
    "word_error_rate",
    "ProviderSet",
    "ProviderSpec",
    "build_provider",
    "ContextBundle",
    "ContextExample",
    "RetrievalConfig",
    "TestQuery",
    "acoustic_rerank",
    "assemble_context",
    "bundle_from_json_line",
    "bundle_to_json_line",
    "retrieve_ticl",
    "retrieve_ticl_plus",
    "semantic_candidates",
    "transcribe_with_context",
    "zero_shot_bundle",
    "CandidateRecord",
    "CandidateStore",
    "attach_embeddings",
    "ingest_manifest",
    "load_store",
    "read_embedding_file",
    "save_store",
    "validate",
    "write_embedding_file",
]
