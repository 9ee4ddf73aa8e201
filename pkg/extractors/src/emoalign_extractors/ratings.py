"""Turn aggregated rating tables into per-sample label lists.

Same two rules the main library defines for its preprocessing, restated
here so this package stays importable on its own: keep labels whose mean
rating strictly exceeds a threshold (falling back to the single best
label when nothing passes), or always keep the top-k rated labels. Ties
go to the lower column index in both rules.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .formats import ExtractionError


def read_ratings_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """CSV with an id column then one column per label; returns
    (sample_ids, label_names, ratings)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise ExtractionError(f"{path}: need an id column plus label columns")
    label_names = rows[0][1:]
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise ExtractionError(
                f"{path}:{lineno}: {len(row)} fields, expected {len(rows[0])}"
            )
        ids.append(row[0])
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as e:
            raise ExtractionError(f"{path}:{lineno}: non-numeric rating: {e}") from e
    return ids, label_names, np.asarray(values, dtype=np.float64)


def labels_mean_threshold(ratings: np.ndarray, threshold: float) -> list[list[int]]:
    if ratings.ndim != 2 or ratings.shape[1] == 0:
        raise ExtractionError("ratings table has no label columns")
    out = []
    for row in ratings:
        picked = np.flatnonzero(row > threshold)
        if picked.size == 0:
            picked = np.array([int(np.argmax(row))])
        out.append([int(i) for i in picked])
    return out


def labels_top_k(ratings: np.ndarray, k: int) -> list[list[int]]:
    if k < 1:
        raise ExtractionError("k must be at least 1")
    if k > ratings.shape[1]:
        raise ExtractionError(f"k={k} exceeds {ratings.shape[1]} labels")
    out = []
    for row in ratings:
        order = np.argsort(-row, kind="stable")
        out.append(sorted(int(i) for i in order[:k]))
    return out


def build_label_lists(
    ratings_csv: str | Path, rule: str, param: float
) -> dict[str, list[str]]:
    """Apply a derivation rule to a ratings CSV; returns id -> label names."""
    ids, names, ratings = read_ratings_csv(ratings_csv)
    if rule == "threshold":
        index_lists = labels_mean_threshold(ratings, float(param))
    elif rule == "topk":
        index_lists = labels_top_k(ratings, int(param))
    else:
        raise ExtractionError(f"rule must be 'threshold' or 'topk', got {rule!r}")
    return {
        sid: [names[i] for i in indices] for sid, indices in zip(ids, index_lists)
    }


def write_label_fragment(labels_by_id: dict, path: str | Path) -> Path:
    """One {"id", "labels"} JSON object per line, ready to join a manifest."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for sid in labels_by_id:
            fh.write(json.dumps({"id": sid, "labels": labels_by_id[sid]},
                                sort_keys=True) + "\n")
    return path
