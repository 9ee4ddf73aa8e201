"""Encoder backends.

Two kinds of encoder feed the pipeline: a music encoder producing
per-frame hidden states at every transformer layer (the feature source)
and a sentence encoder producing one vector per label string. Both are
behind tiny duck-typed interfaces so tests and offline environments can
run against deterministic stubs with the real models' dimensions, while
real extraction loads the published checkpoints.

Real backends import torch/transformers lazily; constructing them
without the packages or the weights raises, it never degrades silently.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_MUSIC_MODEL = "m-a-p/MERT-v1-95M"
DEFAULT_SENTENCE_MODEL = "sentence-transformers/all-MiniLM-L6-v2"


class MusicEncoderBackend:
    """Hidden-layer frame features for raw audio at a fixed sample rate."""

    sample_rate: int
    hidden_size: int
    n_layers: int  # hidden_states entries, embeddings output included

    def layer_frames(self, waveform: np.ndarray) -> list[np.ndarray]:
        """Per layer, a frames x hidden_size matrix for the given mono audio."""
        raise NotImplementedError


class SentenceEncoderBackend:
    dim: int

    def encode(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# real model backends
# ---------------------------------------------------------------------------


class PretrainedMusicEncoder(MusicEncoderBackend):
    def __init__(self, model_id: str = DEFAULT_MUSIC_MODEL):
        import torch  # noqa: F401  (required by the model at call time)
        from transformers import AutoModel, Wav2Vec2FeatureExtractor

        self.model = AutoModel.from_pretrained(model_id, trust_remote_code=True)
        self.model.eval()
        self.processor = Wav2Vec2FeatureExtractor.from_pretrained(
            model_id, trust_remote_code=True
        )
        self.sample_rate = int(self.processor.sampling_rate)
        self.hidden_size = int(self.model.config.hidden_size)
        self.n_layers = int(self.model.config.num_hidden_layers) + 1

    def layer_frames(self, waveform: np.ndarray) -> list[np.ndarray]:
        import torch

        inputs = self.processor(
            waveform.astype(np.float32),
            sampling_rate=self.sample_rate,
            return_tensors="pt",
        )
        with torch.no_grad():
            out = self.model(**inputs, output_hidden_states=True)
        return [h.squeeze(0).numpy().astype(np.float64) for h in out.hidden_states]


class PretrainedSentenceEncoder(SentenceEncoderBackend):
    def __init__(self, model_id: str = DEFAULT_SENTENCE_MODEL):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model_id)
        self.dim = int(self.model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.asarray(self.model.encode(texts), dtype=np.float64)


# ---------------------------------------------------------------------------
# deterministic stubs (offline tests, format conformance)
# ---------------------------------------------------------------------------


class StubMusicEncoder(MusicEncoderBackend):
    """Input-dependent but deterministic frames with the real geometry.

    Frames are a fixed random projection of simple per-window waveform
    statistics, so different audio gives different features and repeated
    runs give identical bytes. Dimensions mirror the published 95M
    encoder: 24 kHz input, 768 hidden, 13 hidden-state layers.
    """

    def __init__(self, sample_rate: int = 24000, hidden_size: int = 768,
                 n_layers: int = 13, frame_hop: int = 960):
        self.sample_rate = sample_rate
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.frame_hop = frame_hop
        rng = np.random.default_rng(181)
        self._proj = rng.standard_normal((n_layers, 4, hidden_size))

    def layer_frames(self, waveform: np.ndarray) -> list[np.ndarray]:
        hops = max(1, len(waveform) // self.frame_hop)
        stats = []
        for i in range(hops):
            w = waveform[i * self.frame_hop : (i + 1) * self.frame_hop]
            if len(w) == 0:
                w = np.zeros(1)
            stats.append([
                float(np.mean(w)),
                float(np.sqrt(np.mean(w * w))),
                float(np.max(w, initial=0.0)),
                float(np.min(w, initial=0.0)),
            ])
        stats_arr = np.asarray(stats)  # hops x 4
        return [stats_arr @ self._proj[l] for l in range(self.n_layers)]


class StubSentenceEncoder(SentenceEncoderBackend):
    """Unit vectors seeded from the text digest; no semantics, stable bytes."""

    def __init__(self, dim: int = 384):
        self.dim = dim

    def encode(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(self.dim)
            rows.append(v / np.linalg.norm(v))
        return np.asarray(rows)


def pretrained_models_available() -> bool:
    """True when the published encoders can actually be constructed."""
    try:
        PretrainedSentenceEncoder()
        return True
    except Exception:
        return False
