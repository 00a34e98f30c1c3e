"""Experiment configuration: one JSON document describing a whole run.

The document names the candidate store, the test manifest, the four provider
specs, and the retrieval/eval settings. Relative paths are resolved against
the config file's directory so a fixture directory is self-contained and a
run is reproducible from the document alone. Command-line flags override
individual values; the merged, effective settings end up in the report
provenance.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .harness import EvalConfig
from .providers import ProviderSet, ProviderSpec, build_provider
from .retrieval import RetrievalConfig
from .store import CandidateStore, attach_embeddings, ingest_manifest, load_store

TOKEN_ENV_VAR = "TICL_PROVIDER_TOKEN"

_PATH_OPTION_KEYS = ("ids_manifest", "references_manifest", "pseudo_label_manifest")


@dataclass
class ExperimentConfig:
    dataset: str
    store: CandidateStore
    test_manifest: Path
    provider_specs: dict[str, ProviderSpec]
    retrieval: RetrievalConfig
    eval: EvalConfig
    jobs: int = 1

    def build_providers(self) -> ProviderSet:
        token = os.environ.get(TOKEN_ENV_VAR)
        built = {
            kind: build_provider(spec, token=token)
            for kind, spec in self.provider_specs.items()
        }
        missing = [k for k in ("text_embedder", "acoustic_embedder", "asr", "sicl_model") if k not in built]
        if missing:
            raise ConfigError(f"config missing providers: {missing}")
        return ProviderSet(
            text_embedder=built["text_embedder"],
            acoustic_embedder=built["acoustic_embedder"],
            asr=built["asr"],
            sicl_model=built["sicl_model"],
        )


def _resolve(base: Path, value: str) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def _load_store_section(base: Path, section: dict) -> CandidateStore:
    if "dir" in section:
        return load_store(_resolve(base, section["dir"]))
    if "manifest" not in section:
        raise ConfigError("store section needs either 'dir' or 'manifest'")
    store = ingest_manifest(_resolve(base, section["manifest"]))
    if section.get("text_embeddings"):
        store = attach_embeddings(store, _resolve(base, section["text_embeddings"]), "text")
    if section.get("acoustic_embeddings"):
        store = attach_embeddings(
            store, _resolve(base, section["acoustic_embeddings"]), "acoustic"
        )
    if "metadata" in section:
        store = dataclasses.replace(store, metadata=dict(section["metadata"]))
    return store


def _provider_spec(base: Path, kind: str, section: dict, seed_override: int | None) -> ProviderSpec:
    options = dict(section.get("options", {}))
    for key in _PATH_OPTION_KEYS:
        if key in options:
            options[key] = _resolve(base, options[key])
    if "acoustic_tables" in options:
        options["acoustic_tables"] = [
            {
                "manifest": _resolve(base, entry["manifest"]),
                "embeddings": _resolve(base, entry["embeddings"]),
            }
            for entry in options["acoustic_tables"]
        ]
    endpoint_or_path = section.get("endpoint_or_path", "")
    if section.get("backend") == "precomputed_file" and endpoint_or_path:
        endpoint_or_path = _resolve(base, endpoint_or_path)
    seed = seed_override if seed_override is not None else int(section.get("seed", 0))
    return ProviderSpec(
        kind=kind,
        backend=section.get("backend", "mock"),
        endpoint_or_path=endpoint_or_path,
        model_id=section.get("model_id", ""),
        dim=section.get("dim"),
        seed=seed,
        options=options,
    )


def load_experiment_config(
    path: str | Path, seed_override: int | None = None
) -> ExperimentConfig:
    """Parse and materialize an experiment document.

    seed_override, when given (the --seed flag), wins over every seed in the
    document, both the eval seed and the mock provider seeds.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    base = path.parent

    for key in ("store", "test_manifest", "providers"):
        if key not in doc:
            raise ConfigError(f"{path}: missing config key {key!r}")

    store = _load_store_section(base, doc["store"])
    test_manifest = Path(_resolve(base, doc["test_manifest"]))
    if not test_manifest.exists():
        raise ConfigError(f"test manifest {test_manifest} does not exist")

    provider_specs = {
        kind: _provider_spec(base, kind, section, seed_override)
        for kind, section in doc["providers"].items()
    }

    retrieval_section = dict(doc.get("retrieval", {}))
    retrieval = RetrievalConfig(
        M=int(retrieval_section.get("M", 300)),
        K=int(retrieval_section.get("K", 1)),
        ordering=retrieval_section.get("ordering", "similar_last"),
        exclude_ids=frozenset(retrieval_section.get("exclude_ids", [])),
    )

    eval_section = dict(doc.get("eval", {}))
    eval_config = EvalConfig(
        methods=tuple(eval_section.get("methods", ("zero_shot", "ticl", "ticl_plus"))),
        k_values=tuple(eval_section.get("k_values", (1, 2, 3, 4))),
        M=int(eval_section.get("M", retrieval_section.get("M", 300))),
        text_norm=eval_section.get("text_norm", "default"),
        seed=seed_override if seed_override is not None else int(eval_section.get("seed", 0)),
        ordering=eval_section.get("ordering", retrieval_section.get("ordering", "similar_last")),
        exclude_ids=frozenset(
            eval_section.get("exclude_ids", retrieval_section.get("exclude_ids", []))
        ),
        aggregation=eval_section.get("aggregation", "pooled"),
        delta_baseline=eval_section.get("delta_baseline", "zero_shot"),
    )

    return ExperimentConfig(
        dataset=doc.get("dataset", store.metadata.get("corpus", "default")),
        store=store,
        test_manifest=test_manifest,
        provider_specs=provider_specs,
        retrieval=retrieval,
        eval=eval_config,
        jobs=int(doc.get("jobs", 1)),
    )
