"""Wire-protocol conformance checks for provider HTTP services.

A service that wants to stand behind the http provider backend can be probed
with `run_protocol_checks`, which exercises the four endpoints through any
transport (a live socket, a test client, anything that can POST JSON) and
returns a list of violations. An empty list means the service conforms:
response shapes match, embedder output is unit-norm with a consistent dim,
identical batches come back identical, and errors carry {"error": str}.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

# transport(path, payload) -> (status_code, parsed_json_body)
Transport = Callable[[str, dict], tuple[int, dict]]

_NORM_TOL = 1e-5


def _check_embed(
    transport: Transport, path: str, key: str, inputs: Sequence[str], violations: list[str]
) -> None:
    status, body = transport(path, {key: list(inputs)})
    if status != 200:
        violations.append(f"{path}: expected 200, got {status}")
        return
    if not isinstance(body, dict) or "dim" not in body or "embeddings" not in body:
        violations.append(f"{path}: body must carry 'dim' and 'embeddings'")
        return
    dim = body["dim"]
    rows = body["embeddings"]
    if not isinstance(dim, int) or dim < 1:
        violations.append(f"{path}: dim must be a positive integer, got {dim!r}")
        return
    if not isinstance(rows, list) or len(rows) != len(inputs):
        violations.append(f"{path}: expected {len(inputs)} rows, got {len(rows) if isinstance(rows, list) else type(rows)}")
        return
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != dim:
            violations.append(f"{path}: row {i} length != dim {dim}")
            return
        if not all(isinstance(x, (int, float)) and math.isfinite(x) for x in row):
            violations.append(f"{path}: row {i} has non-finite or non-numeric entries")
            return
        norm = math.sqrt(sum(float(x) * float(x) for x in row))
        if abs(norm - 1.0) > _NORM_TOL:
            violations.append(f"{path}: row {i} norm {norm:.8f} not unit")
    # batch determinism and within-batch consistency for duplicate inputs
    status2, body2 = transport(path, {key: list(inputs)})
    if status2 != 200 or body2 != body:
        violations.append(f"{path}: identical request returned a different response")
    dup_inputs = [inputs[0], inputs[0]]
    status3, body3 = transport(path, {key: dup_inputs})
    if status3 != 200:
        violations.append(f"{path}: duplicate-input batch failed with {status3}")
    else:
        rows3 = body3.get("embeddings", [])
        if len(rows3) != 2 or rows3[0] != rows3[1]:
            violations.append(f"{path}: identical inputs in one batch gave different rows")


def _check_error_shape(transport: Transport, path: str, payload: dict, violations: list[str]) -> None:
    status, body = transport(path, payload)
    if status == 200:
        violations.append(f"{path}: malformed request {payload!r} was accepted")
        return
    if not isinstance(body, dict) or not isinstance(body.get("error"), str):
        violations.append(f"{path}: non-200 responses must carry {{'error': str}}")


def run_protocol_checks(
    transport: Transport,
    texts: Sequence[str] = ("the cat sat", "a dog ran"),
    audio_refs: Sequence[str] = ("audio/u1.wav", "audio/u2.wav"),
) -> list[str]:
    """Probe all four endpoints; returns violations (empty means conformant)."""
    violations: list[str] = []
    _check_embed(transport, "/v1/embed-text", "texts", texts, violations)
    _check_embed(transport, "/v1/embed-audio", "audio_refs", audio_refs, violations)

    status, body = transport("/v1/transcribe", {"audio_refs": list(audio_refs)})
    if status != 200:
        violations.append(f"/v1/transcribe: expected 200, got {status}")
    else:
        out = body.get("texts")
        if not isinstance(out, list) or len(out) != len(audio_refs) or not all(
            isinstance(t, str) for t in out
        ):
            violations.append("/v1/transcribe: body must carry texts, one string per ref")
        else:
            status2, body2 = transport("/v1/transcribe", {"audio_refs": list(audio_refs)})
            if status2 != 200 or body2 != body:
                violations.append("/v1/transcribe: identical request returned a different response")

    payload = {
        "examples": [{"audio_ref": audio_refs[0], "text": texts[0]}],
        "test_audio_ref": audio_refs[-1],
    }
    status, body = transport("/v1/generate", payload)
    if status != 200:
        violations.append(f"/v1/generate: expected 200, got {status}")
    elif not isinstance(body.get("text"), str):
        violations.append("/v1/generate: body must carry {'text': str}")

    _check_error_shape(transport, "/v1/embed-text", {"wrong_key": []}, violations)
    _check_error_shape(transport, "/v1/transcribe", {"audio_refs": "not-a-list"}, violations)
    _check_error_shape(transport, "/v1/generate", {"examples": 3}, violations)
    return violations
