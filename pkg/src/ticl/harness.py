"""Experiment harness: method x k sweeps, corpus WER, report rendering.

A sweep runs each configured method (zero_shot, ticl, ticl_plus) over a test
set at each context size k, scores corpus WER per cell, and derives each
method's relative reduction against the baseline from its best-over-k WER.
Cell WERs are stored rounded to two decimals (the reporting convention), so
the CSV rendering round-trips exactly.

Per-utterance evaluation is independent and may run on several workers; the
accumulator merges partial results by input order, so reports and audit rows
come out byte-identical across runs and worker counts.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import ConfigError, NoValidPairs, TiclError, ZeroBaseline
from .metrics import (
    TEXT_NORM_POLICIES,
    corpus_wer,
    mean_utterance_wer,
    normalize_text,
    relative_reduction,
    word_error_rate,
)
from .providers import ProviderSet
from .retrieval import (
    ContextBundle,
    RetrievalConfig,
    TestQuery,
    bundle_to_json_line,
    retrieve_ticl,
    retrieve_ticl_plus,
    zero_shot_bundle,
)
from .store import CandidateRecord, CandidateStore

METHODS = ("zero_shot", "ticl", "ticl_plus")
AGGREGATIONS = ("pooled", "utterance_mean")
ZERO_SHOT_K = 0

# A bundle sink receives (method, k, bundle) and returns the audit reference
# string for that bundle (e.g. "bundles/ticl_k2.jsonl:17").
BundleSink = Callable[[str, int, ContextBundle], str]


@dataclass(frozen=True)
class EvalConfig:
    methods: tuple[str, ...] = METHODS
    k_values: tuple[int, ...] = (1, 2, 3, 4)
    M: int = 300
    text_norm: str = "default"
    seed: int = 0
    ordering: str = "similar_last"
    exclude_ids: frozenset[str] = field(default_factory=frozenset)
    aggregation: str = "pooled"
    delta_baseline: str = "zero_shot"

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "k_values", tuple(self.k_values))
        object.__setattr__(self, "exclude_ids", frozenset(self.exclude_ids))
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}")
        if not self.k_values:
            raise ConfigError("k_values must be non-empty")
        if any(k < 1 for k in self.k_values):
            raise ConfigError("k values must be positive")
        if list(self.k_values) != sorted(self.k_values):
            raise ConfigError("k_values must be ascending")
        if self.text_norm not in TEXT_NORM_POLICIES:
            raise ConfigError(f"text_norm must be one of {TEXT_NORM_POLICIES}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if self.delta_baseline not in METHODS:
            raise ConfigError(f"delta_baseline must be one of {METHODS}")


@dataclass
class EvalReport:
    """Sweep results: one WER cell per (dataset, method, k), derived deltas,
    per-utterance failures, and enough provenance to rerun the experiment."""

    cells: dict[tuple[str, str, int], float] = field(default_factory=dict)
    delta_rel: dict[tuple[str, str], float] = field(default_factory=dict)
    failures: list[tuple[str, str]] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    audit_rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"dataset": d, "method": m, "k": k, "wer_percent": v}
                for (d, m, k), v in sorted(self.cells.items())
            ],
            "delta_rel": [
                {"dataset": d, "method": m, "delta_rel_percent": v}
                for (d, m), v in sorted(self.delta_rel.items())
            ],
            "failures": [{"utterance_id": u, "error": e} for u, e in self.failures],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        report = cls()
        for row in doc.get("cells", []):
            report.cells[(row["dataset"], row["method"], int(row["k"]))] = float(
                row["wer_percent"]
            )
        for row in doc.get("delta_rel", []):
            report.delta_rel[(row["dataset"], row["method"])] = float(
                row["delta_rel_percent"]
            )
        report.failures = [
            (row["utterance_id"], row["error"]) for row in doc.get("failures", [])
        ]
        report.provenance = dict(doc.get("provenance", {}))
        return report


def compute_delta_rel(
    cells: dict[tuple[str, str, int], float],
    baseline_method: str = "zero_shot",
) -> dict[tuple[str, str], float]:
    """Best-over-k relative reduction per (dataset, method) vs the baseline.

    The baseline WER is the zero-shot cell (or the baseline method's own
    best-over-k when configured otherwise). Datasets with no baseline cell,
    or a zero baseline, get no entry.
    """
    datasets = sorted({d for d, _, _ in cells})
    out: dict[tuple[str, str], float] = {}
    for dataset in datasets:
        if baseline_method == "zero_shot":
            baseline = cells.get((dataset, "zero_shot", ZERO_SHOT_K))
        else:
            base_cells = [v for (d, m, _), v in cells.items() if d == dataset and m == baseline_method]
            baseline = min(base_cells) if base_cells else None
        if baseline is None or baseline <= 0:
            continue
        for method in METHODS:
            if method == baseline_method:
                continue
            method_cells = [
                v for (d, m, _), v in cells.items() if d == dataset and m == method
            ]
            if not method_cells:
                continue
            out[(dataset, method)] = relative_reduction(baseline, min(method_cells))
    return out


def prepare_query(
    record: CandidateRecord, providers: ProviderSet
) -> TestQuery:
    """Build the retrieval-side view of one test utterance.

    precomputed_file backends are keyed by utterance_id (rows bind to
    manifest lines); mock and http backends receive the natural inputs.
    """
    asr_key = (
        record.utterance_id
        if providers.asr.spec.backend == "precomputed_file"
        else record.audio_ref
    )
    pseudo = providers.asr.pseudo_label(asr_key)
    acoustic_key = (
        record.utterance_id
        if providers.acoustic_embedder.spec.backend == "precomputed_file"
        else record.audio_ref
    )
    acoustic_vec = providers.acoustic_embedder.embed_audio([acoustic_key])[0]
    text_vec = None
    if pseudo.strip():
        text_key = (
            record.utterance_id
            if providers.text_embedder.spec.backend == "precomputed_file"
            else pseudo
        )
        text_vec = providers.text_embedder.embed_text([text_key])[0]
    return TestQuery(
        utterance_id=record.utterance_id,
        audio_ref=record.audio_ref,
        pseudo_label=pseudo,
        acoustic_embedding=acoustic_vec,
        text_embedding=text_vec,
    )


def build_bundle(
    method: str, store: CandidateStore, query: TestQuery, config: RetrievalConfig
) -> ContextBundle:
    if method == "zero_shot":
        return zero_shot_bundle(query, config)
    if method == "ticl":
        return retrieve_ticl(store, query, config)
    if method == "ticl_plus":
        return retrieve_ticl_plus(store, query, config)
    raise ConfigError(f"unknown method {method!r}")


def run_sweep(
    store: CandidateStore,
    test_set: Sequence[CandidateRecord],
    providers: ProviderSet,
    eval_config: EvalConfig,
    dataset: str | None = None,
    jobs: int = 1,
    bundle_sink: BundleSink | None = None,
) -> EvalReport:
    """Run every configured (method, k) over the test set and score it.

    Per-utterance provider failures are recorded and the run continues; only
    configuration errors abort. Results are merged in input order, so the
    report and audit rows are deterministic for a fixed config.
    """
    if dataset is None:
        dataset = store.metadata.get("corpus", "default")
    report = EvalReport()
    report.provenance = {
        "dataset": dataset,
        "methods": list(eval_config.methods),
        "k_values": list(eval_config.k_values),
        "M": eval_config.M,
        "text_norm": eval_config.text_norm,
        "seed": eval_config.seed,
        "ordering": eval_config.ordering,
        "aggregation": eval_config.aggregation,
        "delta_baseline": eval_config.delta_baseline,
        "store_metadata": dict(store.metadata),
        "n_candidates": len(store),
        "n_test": len(test_set),
    }

    def prep(record: CandidateRecord) -> TestQuery | Exception:
        try:
            return prepare_query(record, providers)
        except TiclError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        prepared = list(pool.map(prep, test_set))

    queries: list[tuple[CandidateRecord, TestQuery, list[str]]] = []
    for record, result in zip(test_set, prepared):
        if isinstance(result, Exception):
            report.failures.append(
                (record.utterance_id, f"query: {type(result).__name__}: {result}")
            )
            continue
        ref_tokens = normalize_text(record.transcription, eval_config.text_norm)
        if not ref_tokens:
            report.failures.append((record.utterance_id, "query: EmptyReference"))
            continue
        queries.append((record, result, ref_tokens))

    plan: list[tuple[str, int]] = []
    for method in eval_config.methods:
        if method == "zero_shot":
            plan.append((method, ZERO_SHOT_K))
        else:
            plan.extend((method, k) for k in eval_config.k_values)

    for method, k in plan:
        retrieval_config = RetrievalConfig(
            M=eval_config.M,
            K=max(1, k),
            ordering=eval_config.ordering,
            exclude_ids=eval_config.exclude_ids,
        )

        def evaluate(item: tuple[CandidateRecord, TestQuery, list[str]]):
            record, query, ref_tokens = item
            try:
                bundle = build_bundle(method, store, query, retrieval_config)
                hypothesis = providers.sicl_model.generate(bundle)
            except TiclError as exc:
                return record, None, None, f"{type(exc).__name__}: {exc}"
            hyp_tokens = normalize_text(hypothesis, eval_config.text_norm)
            counts = word_error_rate(ref_tokens, hyp_tokens)
            return record, bundle, (hypothesis, ref_tokens, hyp_tokens, counts), None

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = list(pool.map(evaluate, queries))

        pairs = []
        for record, bundle, scored, error in results:
            if error is not None:
                report.failures.append((record.utterance_id, f"method={method} k={k}: {error}"))
                continue
            hypothesis, ref_tokens, hyp_tokens, counts = scored
            bundle_ref = (
                bundle_sink(method, k, bundle)
                if bundle_sink is not None
                else f"{method}:k{k}:{record.utterance_id}"
            )
            pairs.append((ref_tokens, hyp_tokens))
            report.audit_rows.append(
                {
                    "utterance_id": record.utterance_id,
                    "method": method,
                    "k": k,
                    "reference": record.transcription,
                    "hypothesis": hypothesis,
                    "wer": counts.wer,
                    "bundle_ref": bundle_ref,
                }
            )
        if pairs:
            aggregate = corpus_wer if eval_config.aggregation == "pooled" else mean_utterance_wer
            try:
                report.cells[(dataset, method, k)] = round(aggregate(pairs), 2)
            except NoValidPairs:
                pass

    try:
        report.delta_rel = compute_delta_rel(report.cells, eval_config.delta_baseline)
    except ZeroBaseline:
        report.delta_rel = {}
    return report


def write_audit_file(report: EvalReport, path: str | Path) -> None:
    """Line-delimited per-utterance results, in deterministic sweep order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in report.audit_rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


class FileBundleSink:
    """Writes one JSONL bundle file per (method, k) under a directory and
    hands back "relative/path:line" references for the audit trail."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._counts: dict[str, int] = {}

    def __call__(self, method: str, k: int, bundle: ContextBundle) -> str:
        name = f"bundles_{method}_k{k}.jsonl"
        line_no = self._counts.get(name, 0)
        mode = "a" if line_no else "w"
        with (self.directory / name).open(mode, encoding="utf-8") as fh:
            fh.write(bundle_to_json_line(bundle) + "\n")
        self._counts[name] = line_no + 1
        return f"{name}:{line_no}"


def _dataset_order(cells: dict[tuple[str, str, int], float]) -> list[str]:
    seen: list[str] = []
    for dataset, _, _ in cells:
        if dataset not in seen:
            seen.append(dataset)
    return seen


def _row_order(report: EvalReport) -> list[tuple[str, object]]:
    """Row plan: per method, its k rows ascending then its delta row."""
    rows: list[tuple[str, object]] = []
    methods_present = []
    for method in METHODS:
        if any(m == method for _, m, _ in report.cells):
            methods_present.append(method)
    for method in methods_present:
        ks = sorted({k for _, m, k in report.cells if m == method})
        rows.extend((method, k) for k in ks)
        if any(m == method for _, m in report.delta_rel):
            rows.append((method, "best"))
    return rows


def render_report(report: EvalReport, fmt: str = "aligned_text") -> str:
    """Serialize a report deterministically.

    aligned_text: fixed-width table, one dataset per column, WER cells with
    two decimals and relative-reduction rows ("best") with one.
    csv: header dataset,method,k,wer_percent; one row per cell, plus delta
    rows with k = "best" carrying the relative reduction.
    """
    if fmt == "csv":
        return _render_csv(report)
    if fmt != "aligned_text":
        raise ConfigError(f"unknown report format {fmt!r}")
    datasets = _dataset_order(report.cells)
    header = ["method", "k"] + datasets
    lines = []
    rows: list[list[str]] = [header]
    for method, k in _row_order(report):
        row = [method, str(k)]
        for dataset in datasets:
            if k == "best":
                value = report.delta_rel.get((dataset, method))
                row.append("-" if value is None else f"{value:.1f}")
            else:
                value = report.cells.get((dataset, method, k))
                row.append("-" if value is None else f"{value:.2f}")
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    for r in rows:
        lines.append(
            "  ".join(
                cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c])
                for c, cell in enumerate(r)
            ).rstrip()
        )
    return "\n".join(lines) + "\n"


def _render_csv(report: EvalReport) -> str:
    lines = ["dataset,method,k,wer_percent"]
    datasets = _dataset_order(report.cells)
    for dataset in datasets:
        for method, k in _row_order(report):
            if k == "best":
                value = report.delta_rel.get((dataset, method))
                if value is not None:
                    lines.append(f"{dataset},{method},best,{value:.1f}")
            else:
                value = report.cells.get((dataset, method, k))
                if value is not None:
                    lines.append(f"{dataset},{method},{k},{value:.2f}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> tuple[dict, dict]:
    """Inverse of the csv rendering: (cells, delta_rel) dicts."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "dataset,method,k,wer_percent":
        raise ConfigError("not a report csv: bad header")
    cells: dict[tuple[str, str, int], float] = {}
    delta: dict[tuple[str, str], float] = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 4:
            raise ConfigError(f"bad report csv row: {line!r}")
        dataset, method, k, value = parts
        if k == "best":
            delta[(dataset, method)] = float(value)
        else:
            cells[(dataset, method, int(k))] = float(value)
    return cells, delta
