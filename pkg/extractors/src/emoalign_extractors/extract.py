"""Label-embedding and music-feature extraction jobs.

Features follow the fixed recipe: resample to the encoder's rate, cut
into fixed-length segments (a final partial segment survives only if it
is at least one second long), run the encoder per segment, average the
frame outputs of hidden layers 3, 6, 9, and 12, and concatenate those
four averages into one row per segment. A song therefore becomes a
T x (4 * hidden) matrix written as an EMBMAT01 file, and the job emits a
manifest the main library loads directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .audio import load_audio, resample, split_segments
from .backends import (
    DEFAULT_MUSIC_MODEL,
    DEFAULT_SENTENCE_MODEL,
    MusicEncoderBackend,
    SentenceEncoderBackend,
)
from .formats import ExtractionError, write_embedding_file, write_manifest

log = logging.getLogger(__name__)

FEATURE_LAYERS = (3, 6, 9, 12)


@dataclass(frozen=True)
class ExtractionJob:
    audio_paths: tuple
    out_dir: Path
    dataset_name: str
    split: str = "train"
    segment_seconds: float = 10.0
    min_final_seconds: float = 1.0
    music_model_id: str = DEFAULT_MUSIC_MODEL
    sentence_model_id: str = DEFAULT_SENTENCE_MODEL
    layers: tuple = FEATURE_LAYERS

    def __post_init__(self):
        object.__setattr__(self, "audio_paths", tuple(Path(p) for p in self.audio_paths))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.segment_seconds <= 0:
            raise ExtractionError(
                f"segment length must be positive, got {self.segment_seconds}"
            )
        if not self.music_model_id or not self.sentence_model_id:
            raise ExtractionError("model ids must be non-empty")


def extract_label_embeddings(
    labels: Sequence[str], backend: SentenceEncoderBackend, out_path: str | Path
) -> Path:
    """Embed label strings and write them as one EMBMAT01 file."""
    if not labels:
        raise ExtractionError("no labels to embed")
    labels = list(labels)
    if len(set(labels)) != len(labels):
        raise ExtractionError("label list contains duplicates")
    vectors = backend.encode(labels)
    if vectors.shape != (len(labels), backend.dim):
        raise ExtractionError(
            f"encoder returned shape {vectors.shape}, "
            f"expected ({len(labels)}, {backend.dim})"
        )
    write_embedding_file(vectors, labels, out_path)
    return Path(out_path)


def segment_features(
    waveform: np.ndarray,
    rate: int,
    backend: MusicEncoderBackend,
    segment_seconds: float,
    min_final_seconds: float,
    layers: Sequence[int] = FEATURE_LAYERS,
) -> np.ndarray:
    """The T x (len(layers) * hidden) feature matrix for one song."""
    audio = resample(waveform, rate, backend.sample_rate)
    segments = split_segments(
        audio, backend.sample_rate, segment_seconds, min_final_seconds
    )
    if not segments:
        raise ExtractionError(
            f"no usable segments (audio shorter than {min_final_seconds}s)"
        )
    rows = []
    for segment in segments:
        hidden = backend.layer_frames(segment)
        if max(layers) >= len(hidden):
            raise ExtractionError(
                f"encoder exposes {len(hidden)} layers, need layer {max(layers)}"
            )
        # average over frames within the segment, then concatenate layers
        rows.append(np.concatenate([hidden[l].mean(axis=0) for l in layers]))
    return np.asarray(rows)


def extract_music_features(
    job: ExtractionJob,
    backend: MusicEncoderBackend,
    labels_by_id: Mapping[str, Sequence[str]],
    label_space_rel: str,
) -> Path:
    """Run a whole extraction job and write the dataset manifest.

    Every audio file needs a label entry (keyed by its stem) up front;
    an undecodable file is skipped with a warning, but a decodable file
    with no usable audio aborts the job.
    """
    job.out_dir.mkdir(parents=True, exist_ok=True)
    feat_dir = job.out_dir / "features" / job.dataset_name / job.split
    feat_dir.mkdir(parents=True, exist_ok=True)

    missing = [p.stem for p in job.audio_paths if p.stem not in labels_by_id]
    if missing:
        raise ExtractionError(f"no labels for samples: {missing[:5]}")

    samples = []
    for path in job.audio_paths:
        try:
            waveform, rate = load_audio(path)
        except (ExtractionError, OSError, EOFError) as e:
            log.warning("skipping undecodable %s: %s", path, e)
            continue
        features = segment_features(
            waveform, rate, backend, job.segment_seconds, job.min_final_seconds,
            job.layers,
        )
        rel = f"features/{job.dataset_name}/{job.split}/{path.stem}.emb"
        seg_names = [f"seg{i:04d}" for i in range(features.shape[0])]
        write_embedding_file(features, seg_names, job.out_dir / rel)
        samples.append(
            {"id": path.stem, "features": rel, "labels": labels_by_id[path.stem]}
        )

    manifest = job.out_dir / f"{job.dataset_name}_{job.split}.jsonl"
    return write_manifest(
        manifest, job.dataset_name, job.split, label_space_rel, samples
    )
