"""Provider contracts for the four frozen models behind the pipeline.

The retrieval and evaluation code never touches model internals; it sees four
small interfaces: a text embedder, an acoustic embedder, an ASR pseudo-labeler
and the in-context transcription model. Each has three interchangeable
backends:

- mock: pure function of (seed, input), identical across processes and
  platforms; used for every test and for synthetic experiments,
- precomputed_file: rows from an embedding file keyed by utterance_id (ids
  come from a manifest, rows bind by position), or a JSONL pseudo-label table,
- http: the wire protocol documented in the README (POST {base}/v1/...).

Every embedder output is unit-norm and has the declared dim, whatever the
backend. Providers bound their own concurrency with a per-instance semaphore
(default 4 in-flight calls; serial-only providers use 1).
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimMismatch, ProviderError
from .geometry import EmbeddingVector, euclidean_distance, l2_normalize
from .store import ingest_manifest, read_embedding_file, read_embedding_header

if TYPE_CHECKING:
    from .retrieval import ContextBundle

PROVIDER_KINDS = ("text_embedder", "acoustic_embedder", "asr", "sicl_model")
BACKENDS = ("precomputed_file", "http", "mock")
DEFAULT_MAX_INFLIGHT = 4
DEFAULT_TIMEOUT_S = 60.0
DEFAULT_RETRIES = 2

# Distance assigned to an empty context by the similarity-noise mock: the
# maximum possible between unit vectors, so zero-shot is the worst case.
MAX_UNIT_DISTANCE = 2.0


@dataclass(frozen=True)
class ProviderSpec:
    """Declarative description of one provider, as it appears in config."""

    kind: str
    backend: str
    endpoint_or_path: str = ""
    model_id: str = ""
    dim: int | None = None
    seed: int = 0
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in PROVIDER_KINDS:
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown provider backend {self.backend!r}")
        if self.backend == "precomputed_file" and self.kind == "sicl_model":
            raise ConfigError("precomputed_file backend is not valid for sicl_model")
        if self.backend == "http" and not self.endpoint_or_path:
            raise ConfigError("http backend requires a base endpoint")
        if self.kind in ("text_embedder", "acoustic_embedder") and self.backend != "http":
            if self.dim is None and self.backend == "mock":
                raise ConfigError(f"{self.kind} mock requires dim")


class _Gated:
    """Bounds concurrent in-flight calls per provider instance."""

    def __init__(self, spec: ProviderSpec):
        self.spec = spec
        limit = int(spec.options.get("max_inflight", DEFAULT_MAX_INFLIGHT))
        if spec.options.get("serial_only"):
            limit = 1
        self._gate = threading.BoundedSemaphore(max(1, limit))


def _mock_coordinate(seed: int, namespace: str, text: str, index: int) -> float:
    """Stable 64-bit hash of (seed, namespace, input, coordinate block),
    mapped to [-1, 1]. No dependence on process hash randomization."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", seed))
    h.update(namespace.encode("utf-8"))
    h.update(b"\x00")
    h.update(text.encode("utf-8"))
    h.update(b"\x00")
    h.update(struct.pack("<I", index))
    u = int.from_bytes(h.digest(), "little")
    return (u / float(2**64 - 1)) * 2.0 - 1.0


def _mock_embedding(seed: int, namespace: str, text: str, dim: int) -> EmbeddingVector:
    coords = np.array(
        [_mock_coordinate(seed, namespace, text, i) for i in range(dim)], dtype=np.float64
    )
    return l2_normalize(EmbeddingVector(values=coords.astype(np.float32)))


class _EmbedderBase(_Gated):
    kind_namespace: str

    def __init__(self, spec: ProviderSpec):
        super().__init__(spec)
        self.dim = spec.dim

    def _check_dim(self, vec: EmbeddingVector) -> EmbeddingVector:
        if self.dim is not None and vec.dim != self.dim:
            raise DimMismatch(f"provider returned dim {vec.dim}, declared {self.dim}")
        return vec

    def embed(self, inputs: Sequence[str]) -> list[EmbeddingVector]:
        raise NotImplementedError


class MockEmbedder(_EmbedderBase):
    """Deterministic hash-based embedder.

    Distinct inputs land in near-orthogonal directions; shared prefixes do
    not imply similarity. Tests that need a controlled similarity structure
    plant explicit vectors instead of relying on this backend's geometry.
    """

    def __init__(self, spec: ProviderSpec, namespace: str):
        super().__init__(spec)
        self.namespace = namespace

    def embed(self, inputs: Sequence[str]) -> list[EmbeddingVector]:
        with self._gate:
            assert self.dim is not None
            return [
                self._check_dim(_mock_embedding(self.spec.seed, self.namespace, s, self.dim))
                for s in inputs
            ]


class FileEmbedder(_EmbedderBase):
    """Precomputed rows from an embedding file, keyed by utterance_id.

    endpoint_or_path points at the embedding file; options["ids_manifest"]
    names the manifest whose line order defines the row binding.
    """

    def __init__(self, spec: ProviderSpec, expected_kind: str):
        super().__init__(spec)
        ids_manifest = spec.options.get("ids_manifest")
        if not ids_manifest:
            raise ConfigError("precomputed_file embedder requires options.ids_manifest")
        header = read_embedding_header(spec.endpoint_or_path)
        if header["kind"] != expected_kind:
            raise ConfigError(
                f"{spec.endpoint_or_path}: holds {header['kind']} embeddings, "
                f"provider kind needs {expected_kind}"
            )
        matrix, dim = read_embedding_file(spec.endpoint_or_path)
        ids = [rec.utterance_id for rec in ingest_manifest(ids_manifest).records]
        if len(ids) != matrix.shape[0]:
            raise ConfigError(
                f"{spec.endpoint_or_path}: {matrix.shape[0]} rows for {len(ids)} manifest ids"
            )
        if self.dim is not None and dim != self.dim:
            raise DimMismatch(f"file dim {dim} != declared dim {self.dim}")
        self.dim = dim
        self._rows = {uid: matrix[i] for i, uid in enumerate(ids)}

    def embed(self, inputs: Sequence[str]) -> list[EmbeddingVector]:
        with self._gate:
            out = []
            for key in inputs:
                row = self._rows.get(key)
                if row is None:
                    raise ProviderError(f"no precomputed embedding for id {key!r}")
                # Stored rows are returned as-is so file round trips stay
                # bit-exact; they were normalized when written.
                out.append(self._check_dim(EmbeddingVector(values=row, normalized=True)))
            return out


class _HttpTransport:
    """Thin JSON-over-POST client with retries and optional bearer token."""

    def __init__(self, spec: ProviderSpec, token: str | None = None):
        self.base = spec.endpoint_or_path.rstrip("/")
        self.timeout = float(spec.options.get("timeout_s", DEFAULT_TIMEOUT_S))
        self.retries = int(spec.options.get("retries", DEFAULT_RETRIES))
        self.token = token

    def post(self, path: str, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            req = urllib.request.Request(
                self.base + path, data=body, headers=headers, method="POST"
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                detail = _error_body(exc)
                last_error = ProviderError(f"{path}: HTTP {exc.code}: {detail}")
            except (urllib.error.URLError, TimeoutError, json.JSONDecodeError, OSError) as exc:
                last_error = ProviderError(f"{path}: {exc}")
        assert last_error is not None
        raise last_error


def _error_body(exc: urllib.error.HTTPError) -> str:
    try:
        obj = json.loads(exc.read().decode("utf-8"))
        return str(obj.get("error", obj))
    except Exception:
        return exc.reason if isinstance(exc.reason, str) else str(exc.reason)


class HttpEmbedder(_EmbedderBase):
    def __init__(self, spec: ProviderSpec, path: str, key: str, token: str | None = None):
        super().__init__(spec)
        self._transport = _HttpTransport(spec, token=token)
        self._path = path
        self._key = key

    def embed(self, inputs: Sequence[str]) -> list[EmbeddingVector]:
        with self._gate:
            body = self._transport.post(self._path, {self._key: list(inputs)})
            try:
                dim = int(body["dim"])
                rows = body["embeddings"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ProviderError(f"{self._path}: malformed response: {exc}") from exc
            if self.dim is not None and dim != self.dim:
                raise DimMismatch(f"{self._path}: server dim {dim}, declared {self.dim}")
            if len(rows) != len(inputs):
                raise ProviderError(
                    f"{self._path}: {len(rows)} rows for {len(inputs)} inputs"
                )
            out = []
            for row in rows:
                arr = np.asarray(row, dtype=np.float64)
                if arr.ndim != 1 or arr.size != dim:
                    raise DimMismatch(f"{self._path}: row of size {arr.size}, dim {dim}")
                out.append(self._check_dim(l2_normalize(EmbeddingVector(arr.astype(np.float32)))))
            return out


class TextEmbedder:
    """Maps transcriptions to normalized sentence embeddings."""

    def __init__(self, impl: _EmbedderBase):
        self._impl = impl
        self.spec = impl.spec

    @property
    def dim(self) -> int | None:
        return self._impl.dim

    def embed_text(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if any(t == "" for t in texts):
            raise ProviderError("embed_text requires non-empty strings")
        return self._impl.embed(texts)


class AcousticEmbedder:
    """Maps audio references to normalized speech embeddings."""

    def __init__(self, impl: _EmbedderBase):
        self._impl = impl
        self.spec = impl.spec

    @property
    def dim(self) -> int | None:
        return self._impl.dim

    def embed_audio(self, audio_refs: Sequence[str]) -> list[EmbeddingVector]:
        if any(r == "" for r in audio_refs):
            raise ProviderError("embed_audio requires non-empty refs")
        return self._impl.embed(audio_refs)


class AsrProvider(_Gated):
    """Frozen pseudo-labeler. May return empty text; callers must handle."""

    def pseudo_label(self, audio_ref: str) -> str:
        raise NotImplementedError


class MockAsr(AsrProvider):
    def __init__(self, spec: ProviderSpec, labels: Mapping[str, str]):
        super().__init__(spec)
        self._labels = dict(labels)

    def pseudo_label(self, audio_ref: str) -> str:
        if audio_ref == "":
            raise ProviderError("pseudo_label requires a non-empty ref")
        with self._gate:
            return self._labels.get(audio_ref, "")


class FileAsr(AsrProvider):
    """Pseudo-labels from a JSONL table {"utterance_id": ..., "text": ...}."""

    def __init__(self, spec: ProviderSpec):
        super().__init__(spec)
        self._labels = load_pseudo_label_manifest(spec.endpoint_or_path)

    def pseudo_label(self, audio_ref: str) -> str:
        if audio_ref == "":
            raise ProviderError("pseudo_label requires a non-empty ref")
        with self._gate:
            if audio_ref not in self._labels:
                raise ProviderError(f"no pseudo-label for id {audio_ref!r}")
            return self._labels[audio_ref]


class HttpAsr(AsrProvider):
    def __init__(self, spec: ProviderSpec, token: str | None = None):
        super().__init__(spec)
        self._transport = _HttpTransport(spec, token=token)

    def pseudo_label(self, audio_ref: str) -> str:
        if audio_ref == "":
            raise ProviderError("pseudo_label requires a non-empty ref")
        with self._gate:
            body = self._transport.post("/v1/transcribe", {"audio_refs": [audio_ref]})
            texts = body.get("texts")
            if not isinstance(texts, list) or len(texts) != 1 or not isinstance(texts[0], str):
                raise ProviderError("/v1/transcribe: malformed response")
            return texts[0]


class SiclModelProvider(_Gated):
    """The in-context transcription model: a bundle in, a hypothesis out."""

    def generate(self, bundle: "ContextBundle") -> str:
        raise NotImplementedError


class MockSiclModel(SiclModelProvider):
    """Deterministic stand-ins for the in-context model.

    nearest-echo: return the answer text of the last example in the context
    (under the default ordering that is the most similar one); with an empty
    context, return the fixture pseudo-label for the test utterance.

    similarity-noise: return the fixture reference for the test utterance
    with each word substituted at rate noise_scale * mean acoustic distance
    between the test utterance and the context examples (computed from the
    fixture's acoustic vectors). An empty context counts as the maximum
    distance 2.0, so zero-shot output is the most corrupted. Seeded per
    utterance, stable across processes.
    """

    def __init__(
        self,
        spec: ProviderSpec,
        policy: str,
        references: Mapping[str, str] | None = None,
        pseudo_labels: Mapping[str, str] | None = None,
        acoustic_vectors: Mapping[str, EmbeddingVector] | None = None,
        noise_scale: float = 0.4,
    ):
        super().__init__(spec)
        if policy not in ("nearest_echo", "similarity_noise"):
            raise ConfigError(f"unknown mock sicl policy {policy!r}")
        self.policy = policy
        self.references = dict(references or {})
        self.pseudo_labels = dict(pseudo_labels or {})
        self.acoustic_vectors = dict(acoustic_vectors or {})
        self.noise_scale = float(noise_scale)

    def generate(self, bundle: "ContextBundle") -> str:
        with self._gate:
            if self.policy == "nearest_echo":
                return self._nearest_echo(bundle)
            return self._similarity_noise(bundle)

    def _nearest_echo(self, bundle: "ContextBundle") -> str:
        if bundle.examples:
            return bundle.examples[-1].answer_text
        return self.pseudo_labels.get(bundle.test_utterance_id, "")

    def _mean_acoustic_distance(self, bundle: "ContextBundle") -> float:
        if not bundle.examples:
            return MAX_UNIT_DISTANCE
        test_vec = self.acoustic_vectors.get(bundle.test_utterance_id)
        if test_vec is None:
            raise ProviderError(
                f"similarity_noise mock has no acoustic vector for test "
                f"{bundle.test_utterance_id!r}"
            )
        total = 0.0
        for ex in bundle.examples:
            vec = self.acoustic_vectors.get(ex.utterance_id)
            if vec is None:
                raise ProviderError(
                    f"similarity_noise mock has no acoustic vector for {ex.utterance_id!r}"
                )
            total += euclidean_distance(test_vec, vec)
        return total / len(bundle.examples)

    def _similarity_noise(self, bundle: "ContextBundle") -> str:
        reference = self.references.get(bundle.test_utterance_id)
        if reference is None:
            raise ProviderError(
                f"similarity_noise mock has no reference for {bundle.test_utterance_id!r}"
            )
        rate = min(1.0, max(0.0, self.noise_scale * self._mean_acoustic_distance(bundle)))
        words = reference.split()
        out = []
        for i, word in enumerate(words):
            draw = _mock_coordinate(
                self.spec.seed, "sicl-noise", bundle.test_utterance_id, i
            )
            if (draw + 1.0) / 2.0 < rate:
                out.append(f"xsub{i}x")
            else:
                out.append(word)
        return " ".join(out)


class HttpSiclModel(SiclModelProvider):
    def __init__(self, spec: ProviderSpec, token: str | None = None):
        super().__init__(spec)
        self._transport = _HttpTransport(spec, token=token)

    def generate(self, bundle: "ContextBundle") -> str:
        with self._gate:
            payload = {
                "examples": [
                    {"audio_ref": ex.audio_ref, "text": ex.answer_text}
                    for ex in bundle.examples
                ],
                "test_audio_ref": bundle.test_audio_ref,
            }
            body = self._transport.post("/v1/generate", payload)
            text = body.get("text")
            if not isinstance(text, str):
                raise ProviderError("/v1/generate: malformed response")
            return text


def load_pseudo_label_manifest(path: str | Path) -> dict[str, str]:
    """JSONL of {"utterance_id", "text"}; the ASR file backend's table."""
    labels: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                continue
            obj = json.loads(line)
            uid, text = obj.get("utterance_id"), obj.get("text")
            if not isinstance(uid, str) or not isinstance(text, str):
                raise ConfigError(f"{path}:{lineno}: pseudo-label rows need utterance_id and text")
            labels[uid] = text
    return labels


def load_acoustic_table(
    tables: Sequence[Mapping[str, str]],
) -> dict[str, EmbeddingVector]:
    """Build an id -> acoustic vector map from (manifest, embedding file) pairs."""
    out: dict[str, EmbeddingVector] = {}
    for entry in tables:
        ids = [r.utterance_id for r in ingest_manifest(entry["manifest"]).records]
        matrix, _ = read_embedding_file(entry["embeddings"])
        if len(ids) != matrix.shape[0]:
            raise ConfigError(
                f"{entry['embeddings']}: {matrix.shape[0]} rows for {len(ids)} ids"
            )
        for uid, row in zip(ids, matrix):
            out[uid] = EmbeddingVector(values=row, normalized=True)
    return out


def build_provider(spec: ProviderSpec, token: str | None = None):
    """Instantiate the provider a spec describes.

    mock sicl_model specs take their fixtures from options:
    references_manifest, pseudo_label_manifest, acoustic_tables
    ([{"manifest", "embeddings"}, ...]), policy and noise_scale.
    """
    if spec.kind == "text_embedder":
        if spec.backend == "mock":
            return TextEmbedder(MockEmbedder(spec, namespace="text"))
        if spec.backend == "precomputed_file":
            return TextEmbedder(FileEmbedder(spec, expected_kind="text"))
        return TextEmbedder(HttpEmbedder(spec, "/v1/embed-text", "texts", token=token))
    if spec.kind == "acoustic_embedder":
        if spec.backend == "mock":
            return AcousticEmbedder(MockEmbedder(spec, namespace="acoustic"))
        if spec.backend == "precomputed_file":
            return AcousticEmbedder(FileEmbedder(spec, expected_kind="acoustic"))
        return AcousticEmbedder(
            HttpEmbedder(spec, "/v1/embed-audio", "audio_refs", token=token)
        )
    if spec.kind == "asr":
        if spec.backend == "mock":
            return MockAsr(spec, dict(spec.options.get("labels", {})))
        if spec.backend == "precomputed_file":
            return FileAsr(spec)
        return HttpAsr(spec, token=token)
    # sicl_model
    if spec.backend == "mock":
        references: dict[str, str] = dict(spec.options.get("references", {}))
        ref_manifest = spec.options.get("references_manifest")
        if ref_manifest:
            references.update(
                {
                    r.utterance_id: r.transcription
                    for r in ingest_manifest(ref_manifest).records
                }
            )
        pseudo: dict[str, str] = dict(spec.options.get("pseudo_labels", {}))
        pl_manifest = spec.options.get("pseudo_label_manifest")
        if pl_manifest:
            pseudo.update(load_pseudo_label_manifest(pl_manifest))
        acoustic: dict[str, EmbeddingVector] = {}
        tables = spec.options.get("acoustic_tables")
        if tables:
            acoustic = load_acoustic_table(tables)
        for key, vec in spec.options.get("acoustic_vectors", {}).items():
            acoustic[key] = (
                vec
                if isinstance(vec, EmbeddingVector)
                else EmbeddingVector(np.asarray(vec, dtype=np.float32), normalized=True)
            )
        return MockSiclModel(
            spec,
            policy=str(spec.options.get("policy", "nearest_echo")),
            references=references,
            pseudo_labels=pseudo,
            acoustic_vectors=acoustic,
            noise_scale=float(spec.options.get("noise_scale", 0.4)),
        )
    return HttpSiclModel(spec, token=token)


@dataclass(frozen=True)
class ProviderSet:
    """The four providers an experiment needs, built from config specs."""

    text_embedder: TextEmbedder
    acoustic_embedder: AcousticEmbedder
    asr: AsrProvider
    sicl_model: SiclModelProvider
