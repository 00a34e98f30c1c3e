from __future__ import annotations

import json
import math
import wave
from pathlib import Path

import numpy as np
import pytest


def write_wav(path: Path, seconds: float = 0.5, freq: float = 440.0, rate: int = 16000):
    """Tiny 16-bit PCM mono sine with a deterministic noise floor."""
    n = int(seconds * rate)
    t = np.arange(n) / rate
    rng = np.random.default_rng(abs(hash(path.name)) % (2**32))
    samples = 0.4 * np.sin(2 * math.pi * freq * t) + 0.05 * rng.standard_normal(n)
    pcm = np.clip(samples * 32767, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(rate)
        wav.writeframes(pcm.tobytes())
    return path


@pytest.fixture
def fixture_corpus(tmp_path):
    """3-utterance manifest with real wav files alongside it."""
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    rows = []
    for i, freq in enumerate((220.0, 440.0, 880.0)):
        name = f"u{i}.wav"
        write_wav(audio_dir / name, seconds=0.3 + 0.1 * i, freq=freq)
        rows.append(
            {
                "utterance_id": f"u{i}",
                "audio_ref": f"audio/{name}",
                "transcription": f"spoken sentence number {i}",
            }
        )
    manifest = tmp_path / "manifest.jsonl"
    with manifest.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return tmp_path, manifest, rows
