import json

import numpy as np
import pytest

from emoalign_extractors import (
    ExtractionJob,
    StubMusicEncoder,
    StubSentenceEncoder,
    extract_label_embeddings,
    extract_music_features,
    segment_features,
)
from emoalign_extractors.audio import load_wav
from emoalign_extractors.formats import ExtractionError


class TestLabelEmbeddings:
    def test_single_label_file(self, tmp_path):
        path = extract_label_embeddings(
            ["happy"], StubSentenceEncoder(), tmp_path / "labels.emb"
        )
        raw = path.read_bytes()
        assert raw[:8] == b"EMBMAT01"
        assert int.from_bytes(raw[8:12], "little") == 1
        assert int.from_bytes(raw[12:16], "little") == 384
        sidecar = json.loads((tmp_path / "labels.emb.json").read_text())
        assert sidecar == {"names": ["happy"]}

    def test_default_encoder_width_is_384(self):
        assert StubSentenceEncoder().dim == 384

    def test_empty_and_duplicate_labels_rejected(self, tmp_path):
        with pytest.raises(ExtractionError):
            extract_label_embeddings([], StubSentenceEncoder(), tmp_path / "x.emb")
        with pytest.raises(ExtractionError):
            extract_label_embeddings(
                ["happy", "happy"], StubSentenceEncoder(), tmp_path / "x.emb"
            )

    def test_deterministic_bytes(self, tmp_path):
        labels = ["happy", "joyful", "angry"]
        p1 = extract_label_embeddings(labels, StubSentenceEncoder(), tmp_path / "a.emb")
        p2 = extract_label_embeddings(labels, StubSentenceEncoder(), tmp_path / "b.emb")
        assert p1.read_bytes() == p2.read_bytes()


class TestSegmentFeatures:
    def test_tone_30s_gives_3x3072(self, tone_wav):
        samples, rate = load_wav(tone_wav(30.0))
        feats = segment_features(samples, rate, StubMusicEncoder(), 10.0, 1.0)
        assert feats.shape == (3, 3072)  # 4 layers x 768 hidden

    def test_4s_tone_gives_single_segment(self, tone_wav):
        samples, rate = load_wav(tone_wav(4.0))
        feats = segment_features(samples, rate, StubMusicEncoder(), 10.0, 1.0)
        assert feats.shape[0] == 1

    def test_sub_second_audio_errors(self, tone_wav):
        samples, rate = load_wav(tone_wav(0.4))
        with pytest.raises(ExtractionError, match="segments"):
            segment_features(samples, rate, StubMusicEncoder(), 10.0, 1.0)

    def test_different_audio_gives_different_features(self, tone_wav):
        backend = StubMusicEncoder()
        a, rate = load_wav(tone_wav(5.0, freq=440.0, name="a.wav"))
        b, _ = load_wav(tone_wav(5.0, freq=220.0, name="b.wav"))
        fa = segment_features(a, rate, backend, 10.0, 1.0)
        fb = segment_features(b, rate, backend, 10.0, 1.0)
        assert not np.allclose(fa, fb)


class TestExtractionJob:
    def _job(self, tmp_path, paths, **kw):
        return ExtractionJob(
            audio_paths=paths, out_dir=tmp_path / "out",
            dataset_name="demo", split="train", **kw,
        )

    def test_job_writes_manifest_and_features(self, tmp_path, tone_wav):
        paths = [tone_wav(12.0, name="song1.wav"), tone_wav(25.0, name="song2.wav")]
        job = self._job(tmp_path, paths)
        manifest = extract_music_features(
            job, StubMusicEncoder(),
            {"song1": ["happy"], "song2": ["angry", "tense"]},
            label_space_rel="labels.emb",
        )
        lines = [json.loads(l) for l in manifest.read_text().splitlines()]
        assert lines[0] == {"label_space": "labels.emb", "name": "demo",
                            "split": "train"}
        assert [l["id"] for l in lines[1:]] == ["song1", "song2"]
        for rec in lines[1:]:
            assert (job.out_dir / rec["features"]).exists()

    def test_missing_labels_rejected_up_front(self, tmp_path, tone_wav):
        job = self._job(tmp_path, [tone_wav(5.0, name="song1.wav")])
        with pytest.raises(ExtractionError, match="song1"):
            extract_music_features(job, StubMusicEncoder(), {}, "labels.emb")

    def test_undecodable_file_skipped_with_warning(self, tmp_path, tone_wav, caplog):
        bad = tmp_path / "broken.wav"
        bad.write_bytes(b"not a wav at all")
        paths = [tone_wav(5.0, name="good.wav"), bad]
        job = self._job(tmp_path, paths)
        with caplog.at_level("WARNING"):
            manifest = extract_music_features(
                job, StubMusicEncoder(),
                {"good": ["happy"], "broken": ["sad"]}, "labels.emb",
            )
        assert any("broken" in r.message for r in caplog.records)
        lines = manifest.read_text().splitlines()
        assert len(lines) == 2  # header + the one good sample

    def test_invalid_segment_length_rejected(self, tmp_path, tone_wav):
        with pytest.raises(ExtractionError):
            self._job(tmp_path, [tone_wav(5.0)], segment_seconds=0.0)
