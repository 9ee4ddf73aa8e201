import json

import numpy as np
import pytest

from emoalign_extractors import (
    build_label_lists,
    labels_mean_threshold,
    labels_top_k,
    write_label_fragment,
)
from emoalign_extractors.formats import ExtractionError


class TestThresholdRule:
    def test_worked_example(self):
        assert labels_mean_threshold(np.array([[3.5, 2.0, 3.0]]), 3.0) == [[0]]

    def test_fallback_to_argmax(self):
        assert labels_mean_threshold(np.array([[2.0, 2.5, 1.0]]), 3.0) == [[1]]

    def test_all_pass(self):
        assert labels_mean_threshold(np.array([[5.0, 5.0, 5.0]]), 3.0) == [[0, 1, 2]]

    def test_never_empty(self):
        rng = np.random.default_rng(0)
        ratings = rng.uniform(1, 5, size=(30, 6))
        assert all(r for r in labels_mean_threshold(ratings, 4.9))


class TestTopKRule:
    def test_worked_example(self):
        assert labels_top_k(np.array([[5.0, 1.0, 4.0, 4.0, 2.0]]), 3) == [[0, 2, 3]]

    def test_stable_ties(self):
        assert labels_top_k(np.array([[1.0, 1.0, 1.0]]), 3) == [[0, 1, 2]]

    def test_k_bounds(self):
        with pytest.raises(ExtractionError):
            labels_top_k(np.array([[1.0]]), 0)
        with pytest.raises(ExtractionError):
            labels_top_k(np.array([[1.0]]), 2)


class TestBuildLabelLists:
    def _csv(self, tmp_path):
        path = tmp_path / "ratings.csv"
        path.write_text(
            "id,happy,sad,tense\n"
            "song1,3.5,2.0,3.0\n"
            "song2,2.0,2.5,1.0\n"
        )
        return path

    def test_threshold_rule(self, tmp_path):
        labels = build_label_lists(self._csv(tmp_path), "threshold", 3.0)
        assert labels == {"song1": ["happy"], "song2": ["sad"]}

    def test_topk_rule(self, tmp_path):
        labels = build_label_lists(self._csv(tmp_path), "topk", 2)
        assert labels == {"song1": ["happy", "tense"], "song2": ["happy", "sad"]}

    def test_unknown_rule_rejected(self, tmp_path):
        with pytest.raises(ExtractionError, match="rule"):
            build_label_lists(self._csv(tmp_path), "median", 3.0)

    def test_fragment_round_trip(self, tmp_path):
        labels = {"song1": ["happy"], "song2": ["sad", "tense"]}
        path = write_label_fragment(labels, tmp_path / "labels.jsonl")
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        assert rows == [
            {"id": "song1", "labels": ["happy"]},
            {"id": "song2", "labels": ["sad", "tense"]},
        ]
