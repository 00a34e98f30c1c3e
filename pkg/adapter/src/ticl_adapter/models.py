"""Encoder and ASR backends.

Model ids select the backend: "stub:<seed>" gives the deterministic test
models (no weights, no downloads, stable across platforms), anything else is
treated as a Hugging Face model id and loaded lazily, so the heavy
dependencies are only imported when real models are requested.

Speech encoders return a frame matrix; `pool_frames` turns it into the one
fixed-size vector per utterance the retrieval engine stores. Which encoder
layer feeds the frames is a job option (default: the final layer).
"""

from __future__ import annotations

import hashlib
import struct
import wave
from pathlib import Path

import numpy as np

POOLINGS = ("mean", "first", "last")


def pool_frames(frames: np.ndarray, pooling: str) -> np.ndarray:
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"expected (frames, dim) with >= 1 frame, got {frames.shape}")
    if pooling == "mean":
        return frames.mean(axis=0)
    if pooling == "first":
        return frames[0]
    if pooling == "last":
        return frames[-1]
    raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("cannot normalize a zero vector")
    return (matrix / norms).astype(np.float32)


def load_wav_mono(path: str | Path) -> np.ndarray:
    """16-bit PCM WAV to float64 samples in [-1, 1], channels averaged."""
    with wave.open(str(path), "rb") as wav:
        n_channels = wav.getnchannels()
        width = wav.getsampwidth()
        if width != 2:
            raise ValueError(f"{path}: only 16-bit PCM supported, got width {width}")
        data = wav.readframes(wav.getnframes())
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    if samples.size == 0:
        raise ValueError(f"{path}: empty audio")
    return samples


def _is_stub(model_id: str) -> bool:
    return model_id.startswith("stub")


def _stub_seed(model_id: str) -> int:
    if ":" in model_id:
        return int(model_id.split(":", 1)[1])
    return 0


class StubTextEncoder:
    """Hash-based sentence embeddings: pure function of (seed, text)."""

    def __init__(self, model_id: str, dim: int = 16):
        self.model_id = model_id
        self.dim = dim
        self._seed = _stub_seed(model_id)

    def encode(self, texts: list[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim), dtype=np.float64)
        for r, text in enumerate(texts):
            for c in range(self.dim):
                h = hashlib.blake2b(digest_size=8)
                h.update(struct.pack("<q", self._seed))
                h.update(b"adapter-text\x00")
                h.update(text.encode("utf-8"))
                h.update(struct.pack("<I", c))
                u = int.from_bytes(h.digest(), "little")
                rows[r, c] = (u / float(2**64 - 1)) * 2.0 - 1.0
        return l2_normalize_rows(rows)


class StubSpeechEncoder:
    """Windowed cosine-transform features over raw samples.

    Each window of samples becomes one frame via a small DCT-like projection,
    which keeps the output a deterministic function of the waveform alone.
    One layer only; the layer option is honored by real backends.
    """

    def __init__(self, model_id: str, dim: int = 24, window: int = 512, hop: int = 256):
        self.model_id = model_id
        self.dim = dim
        self.window = window
        self.hop = hop

    def frames(self, samples: np.ndarray) -> np.ndarray:
        if samples.size < self.window:
            padded = np.zeros(self.window, dtype=np.float64)
            padded[: samples.size] = samples
            windows = [padded]
        else:
            windows = [
                samples[start : start + self.window]
                for start in range(0, samples.size - self.window + 1, self.hop)
            ]
        t = np.arange(self.window, dtype=np.float64)
        basis = np.cos(
            np.pi * np.outer(np.arange(1, self.dim + 1), (t + 0.5) / self.window)
        )
        out = np.stack([basis @ w for w in windows])
        # a tiny bias keeps silent windows from collapsing to the zero vector
        out[:, 0] += 1e-3
        return out

    def encode_file(self, path: str | Path, pooling: str) -> np.ndarray:
        pooled = pool_frames(self.frames(load_wav_mono(path)), pooling)
        return l2_normalize_rows(pooled[None, :])[0]


class StubAsr:
    """Deterministic transcript derived from the waveform statistics."""

    def __init__(self, model_id: str):
        self.model_id = model_id

    def transcribe_file(self, path: str | Path) -> str:
        samples = load_wav_mono(path)
        n_words = max(1, min(8, samples.size // 4000))
        energy = int(np.sum(samples * samples) * 1000) % 97
        return " ".join(f"stub{energy}word{i}" for i in range(n_words))


def _require_real_models(feature: str):
    raise RuntimeError(
        f"{feature} needs the real-model dependencies; install the "
        "'real-models' extra (sentence-transformers, transformers, torch)"
    )


class SentenceTransformerTextEncoder:
    """Real text encoder via sentence-transformers; lazy import."""

    def __init__(self, model_id: str, device: str | None = None):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError:
            _require_real_models("text encoding")
        self.model_id = model_id
        self._model = SentenceTransformer(model_id, device=device)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(texts, convert_to_numpy=True, normalize_embeddings=False)
        return l2_normalize_rows(np.asarray(vectors))


class HfSpeechEncoder:
    """Real speech encoder via transformers; frames from a chosen layer."""

    def __init__(self, model_id: str, layer: str = "final", device: str | None = None):
        try:
            import torch  # noqa: F401
            from transformers import AutoFeatureExtractor, AutoModel
        except ImportError:
            _require_real_models("speech encoding")
        self.model_id = model_id
        self.layer = layer
        self._extractor = AutoFeatureExtractor.from_pretrained(model_id)
        self._model = AutoModel.from_pretrained(model_id)
        if device:
            self._model = self._model.to(device)
        self._model.eval()
        self.dim = int(self._model.config.hidden_size)

    def encode_file(self, path: str | Path, pooling: str) -> np.ndarray:
        import torch

        samples = load_wav_mono(path)
        inputs = self._extractor(
            samples, sampling_rate=getattr(self._extractor, "sampling_rate", 16000),
            return_tensors="pt",
        )
        with torch.no_grad():
            wants_hidden = self.layer != "final"
            outputs = self._model(**inputs, output_hidden_states=wants_hidden)
        if self.layer == "final":
            frames = outputs.last_hidden_state[0]
        else:
            frames = outputs.hidden_states[int(self.layer)][0]
        pooled = pool_frames(frames.cpu().numpy().astype(np.float64), pooling)
        return l2_normalize_rows(pooled[None, :])[0]


class HfAsr:
    """Real pseudo-labeler via a transformers ASR pipeline; lazy import."""

    def __init__(self, model_id: str, device: str | None = None):
        try:
            from transformers import pipeline
        except ImportError:
            _require_real_models("pseudo-labeling")
        self.model_id = model_id
        self._pipe = pipeline("automatic-speech-recognition", model=model_id, device=device)

    def transcribe_file(self, path: str | Path) -> str:
        result = self._pipe(str(path))
        return result["text"] if isinstance(result, dict) else str(result)


def build_text_encoder(model_id: str, dim: int = 16, device: str | None = None):
    if _is_stub(model_id):
        return StubTextEncoder(model_id, dim=dim)
    return SentenceTransformerTextEncoder(model_id, device=device)


def build_speech_encoder(
    model_id: str, dim: int = 24, layer: str = "final", device: str | None = None
):
    if _is_stub(model_id):
        return StubSpeechEncoder(model_id, dim=dim)
    return HfSpeechEncoder(model_id, layer=layer, device=device)


def build_asr(model_id: str, device: str | None = None):
    if _is_stub(model_id):
        return StubAsr(model_id)
    return HfAsr(model_id, device=device)
