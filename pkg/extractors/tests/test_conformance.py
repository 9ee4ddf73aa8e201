"""Interface conformance: everything this package writes, the main
library must read back unchanged. These tests are the only place the two
packages meet, and they meet strictly through files on disk."""

import numpy as np
import pytest

from emoalign import load_dataset, read_embedding_matrix

from emoalign_extractors import (
    ExtractionJob,
    StubMusicEncoder,
    StubSentenceEncoder,
    extract_label_embeddings,
    extract_music_features,
    pretrained_models_available,
)
from emoalign_extractors.audio import load_wav
from emoalign_extractors.extract import segment_features

needs_models = pytest.mark.skipif(
    not pretrained_models_available(),
    reason="pretrained encoders not downloadable in this environment",
)


class TestFeatureConformance:
    def test_30s_tone_yields_3x3072_accepted_by_primary_loader(self, tmp_path, tone_wav):
        job = ExtractionJob(
            audio_paths=[tone_wav(30.0, name="tone.wav")],
            out_dir=tmp_path / "out", dataset_name="tones", split="test",
        )
        labels_path = extract_label_embeddings(
            ["calm"], StubSentenceEncoder(), job.out_dir / "tones_labels.emb"
        )
        assert labels_path.exists()
        manifest = extract_music_features(
            job, StubMusicEncoder(), {"tone": ["calm"]}, "tones_labels.emb"
        )
        feat = read_embedding_matrix(job.out_dir / "features/tones/test/tone.emb")
        assert feat.data.shape == (3, 3072)

        dataset = load_dataset(manifest)
        assert len(dataset) == 1
        assert dataset.samples[0].features.shape == (3, 3072)
        assert dataset.label_space.names == ("calm",)

    def test_label_file_roundtrips_through_primary_reader(self, tmp_path):
        path = extract_label_embeddings(
            ["happy", "joyful", "angry"], StubSentenceEncoder(),
            tmp_path / "labels.emb",
        )
        back = read_embedding_matrix(path)
        assert back.names == ("happy", "joyful", "angry")
        assert back.cols == 384

    def test_extraction_is_deterministic(self, tmp_path, tone_wav):
        wav = tone_wav(12.0)
        samples, rate = load_wav(wav)
        backend = StubMusicEncoder()
        f1 = segment_features(samples, rate, backend, 10.0, 1.0)
        f2 = segment_features(samples, rate, backend, 10.0, 1.0)
        assert np.array_equal(f1, f2)


@needs_models
class TestPretrainedSemantics:
    def test_happy_joyful_closer_than_happy_angry(self, tmp_path):
        from emoalign_extractors import PretrainedSentenceEncoder

        path = extract_label_embeddings(
            ["happy", "joyful", "angry"], PretrainedSentenceEncoder(),
            tmp_path / "labels.emb",
        )
        emb = read_embedding_matrix(path)
        assert emb.cols == 384  # published MiniLM output width

        def cos(a, b):
            return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

        happy, joyful, angry = emb.data
        assert cos(happy, joyful) > cos(happy, angry)

    def test_real_music_encoder_dims(self, tmp_path, tone_wav):
        from emoalign_extractors import PretrainedMusicEncoder

        backend = PretrainedMusicEncoder()
        samples, rate = load_wav(tone_wav(10.0))
        feats = segment_features(samples, rate, backend, 10.0, 1.0)
        assert feats.shape == (1, 4 * backend.hidden_size)  # 3072 for the 95M model
