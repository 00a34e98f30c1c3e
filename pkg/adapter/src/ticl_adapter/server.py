"""HTTP service implementing the provider wire protocol.

POST /v1/embed-text, /v1/embed-audio, /v1/transcribe, /v1/generate with JSON
bodies; every non-200 response carries {"error": str} (including validation
errors, which is why request bodies are validated by hand rather than left
to the framework's default error shape). Batches beyond the configured bound
get a 413. The generation endpoint answers with the most similar example's
text (the last one in the context) or, for an empty context, the ASR
transcript of the test audio; a real in-context model slots in behind the
same route.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .models import build_asr, build_speech_encoder, build_text_encoder


@dataclass
class ServiceConfig:
    text_model: str = "stub:0"
    speech_model: str = "stub:0"
    asr_model: str = "stub:0"
    text_dim: int = 16
    acoustic_dim: int = 24
    pooling: str = "mean"
    layer: str = "final"
    max_batch: int = 64
    audio_root: str | None = None
    token: str | None = None
    device: str | None = None


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def build_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    text_encoder = build_text_encoder(config.text_model, dim=config.text_dim, device=config.device)
    speech_encoder = build_speech_encoder(
        config.speech_model, dim=config.acoustic_dim, layer=config.layer, device=config.device
    )
    asr = build_asr(config.asr_model, device=config.device)
    app = FastAPI(title="ticl-adapter", docs_url=None, redoc_url=None)

    def resolve(audio_ref: str) -> Path:
        path = Path(audio_ref)
        if not path.is_absolute() and config.audio_root:
            path = Path(config.audio_root) / path
        return path

    async def parse_body(request: Request) -> dict | JSONResponse:
        if config.token:
            supplied = request.headers.get("Authorization", "")
            if supplied != f"Bearer {config.token}":
                return _error(401, "missing or invalid bearer token")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        return body

    def string_list(body: dict, key: str) -> list[str] | JSONResponse:
        value = body.get(key)
        if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
            return _error(400, f"{key} must be a list of strings")
        if len(value) > config.max_batch:
            return _error(413, f"batch of {len(value)} exceeds limit {config.max_batch}")
        return value

    @app.post("/v1/embed-text")
    async def embed_text(request: Request):
        body = await parse_body(request)
        if isinstance(body, JSONResponse):
            return body
        texts = string_list(body, "texts")
        if isinstance(texts, JSONResponse):
            return texts
        try:
            matrix = text_encoder.encode(list(texts))
        except Exception as exc:
            return _error(500, f"text encoder failed: {exc}")
        return {"dim": int(matrix.shape[1]), "embeddings": matrix.tolist()}

    @app.post("/v1/embed-audio")
    async def embed_audio(request: Request):
        body = await parse_body(request)
        if isinstance(body, JSONResponse):
            return body
        refs = string_list(body, "audio_refs")
        if isinstance(refs, JSONResponse):
            return refs
        rows = []
        for ref in refs:
            try:
                rows.append(speech_encoder.encode_file(resolve(ref), config.pooling).tolist())
            except Exception as exc:
                return _error(500, f"speech encoder failed on {ref!r}: {exc}")
        return {"dim": int(speech_encoder.dim), "embeddings": rows}

    @app.post("/v1/transcribe")
    async def transcribe(request: Request):
        body = await parse_body(request)
        if isinstance(body, JSONResponse):
            return body
        refs = string_list(body, "audio_refs")
        if isinstance(refs, JSONResponse):
            return refs
        texts = []
        for ref in refs:
            try:
                texts.append(asr.transcribe_file(resolve(ref)))
            except Exception as exc:
                return _error(500, f"asr failed on {ref!r}: {exc}")
        return {"texts": texts}

    @app.post("/v1/generate")
    async def generate(request: Request):
        body = await parse_body(request)
        if isinstance(body, JSONResponse):
            return body
        examples = body.get("examples")
        test_ref = body.get("test_audio_ref")
        if (
            not isinstance(examples, list)
            or not isinstance(test_ref, str)
            or not all(
                isinstance(e, dict)
                and isinstance(e.get("audio_ref"), str)
                and isinstance(e.get("text"), str)
                for e in examples
            )
        ):
            return _error(400, "examples must be [{audio_ref, text}] and test_audio_ref a string")
        if len(examples) > config.max_batch:
            return _error(413, f"context of {len(examples)} exceeds limit {config.max_batch}")
        if examples:
            return {"text": examples[-1]["text"]}
        try:
            return {"text": asr.transcribe_file(resolve(test_ref))}
        except Exception as exc:
            return _error(500, f"generation fallback failed on {test_ref!r}: {exc}")

    return app
