"""Zero-shot top-k prediction and macro-F1 evaluation.

Prediction never needs the training label space: a sample is projected
into the embedding space and ranked by cosine distance against whatever
label space the caller supplies, seen or unseen. Evaluation is therefore
the same code path in-domain and zero-shot; nothing here mutates
parameters or touches optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, LabelSpace, Sample
from .errors import ArgumentError, DegenerateInputError
from .projector import ProjectorParams, batched_forward

F1_ZERO_DIVISION = 0.0  # 0/0 precision, recall, and F1 all count as zero

# Default top-k per benchmark dataset: the average number of labels per
# instance, rounded.
DATASET_EVAL_K = {"MTG-Jamendo": 2, "CAL500": 4, "Emotify": 3}


@dataclass(frozen=True)
class PredictionResult:
    """Top-k labels for one sample, nearest first."""

    indices: tuple[int, ...]
    distances: tuple[float, ...]
    k: int

    def __post_init__(self):
        if self.k < 1 or len(self.indices) != self.k:
            raise ArgumentError(f"expected {self.k} ranked labels, got {len(self.indices)}")
        if any(b < a - 1e-12 for a, b in zip(self.distances, self.distances[1:])):
            raise ArgumentError("distances must be non-decreasing in rank")


def rank_by_distance(output: np.ndarray, label_matrix: np.ndarray, k: int) -> PredictionResult:
    """Rank label rows by cosine distance to `output`; ties go to lower index."""
    n = label_matrix.shape[0]
    if k < 1 or k > n:
        raise ArgumentError(f"k={k} must be in [1, {n}] for a {n}-label space")
    out_norm = np.linalg.norm(output)
    if out_norm == 0.0:
        raise DegenerateInputError("projector output has zero norm")
    label_norms = np.linalg.norm(label_matrix, axis=1)
    if np.any(label_norms == 0.0):
        raise DegenerateInputError("label embedding with zero norm")
    cos = label_matrix @ output / (label_norms * out_norm)
    dist = 1.0 - cos
    order = np.argsort(dist, kind="stable")[:k]
    return PredictionResult(
        indices=tuple(int(i) for i in order),
        distances=tuple(float(dist[i]) for i in order),
        k=k,
    )


def predict_topk(
    params: ProjectorParams, sample, label_space: LabelSpace, k: int
) -> PredictionResult:
    """Project one sample and return its k nearest labels by cosine distance."""
    features = sample.features if isinstance(sample, Sample) else sample
    output = batched_forward(params, [np.asarray(features, dtype=np.float64)],
                             with_grad=False).data[0]
    return rank_by_distance(output, label_space.embedding.data, k)


def _label_f1_counts(
    predicted: Sequence[Sequence[int]],
    truth: Sequence[Sequence[int]],
    n_labels: int,
) -> np.ndarray:
    if len(predicted) != len(truth):
        raise ArgumentError(
            f"{len(predicted)} predictions for {len(truth)} truth sets"
        )
    if not predicted:
        raise ArgumentError("cannot score an empty sample list")
    tp = np.zeros(n_labels)
    fp = np.zeros(n_labels)
    fn = np.zeros(n_labels)
    for pred, true in zip(predicted, truth):
        pset, tset = set(pred), set(true)
        if any(i >= n_labels or i < 0 for i in pset | tset):
            raise ArgumentError(f"label index outside the {n_labels}-label space")
        for i in pset & tset:
            tp[i] += 1
        for i in pset - tset:
            fp[i] += 1
        for i in tset - pset:
            fn[i] += 1
    return np.stack([tp, fp, fn])


def per_label_f1(
    predicted: Sequence[Sequence[int]],
    truth: Sequence[Sequence[int]],
    n_labels: int,
) -> np.ndarray:
    """Binary F1 per label; 0/0 counts as zero."""
    tp, fp, fn = _label_f1_counts(predicted, truth, n_labels)
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), F1_ZERO_DIVISION)
    return f1


def macro_f1(
    predicted: Sequence[Sequence[int]],
    truth: Sequence[Sequence[int]],
    n_labels: int,
) -> float:
    """Unweighted mean of per-label F1 over all `n_labels` labels.

    Labels that never occur in truth or predictions contribute zero, so
    the macro average is over the full label space, not just the active
    labels.
    """
    return float(per_label_f1(predicted, truth, n_labels).mean())


def default_k(dataset: Dataset) -> int:
    """Average true-label count per sample, rounded, clipped to [1, N]."""
    if not dataset.samples:
        raise ArgumentError(f"dataset {dataset.name!r} has no samples")
    mean_labels = np.mean([len(s.label_indices) for s in dataset.samples])
    return int(np.clip(round(mean_labels), 1, dataset.label_space.size))


def evaluate(
    params: ProjectorParams,
    dataset: Dataset,
    k: int | None = None,
    segment_level: bool = False,
) -> dict:
    """Score a dataset against its own label space.

    `segment_level` scores every segment row as its own single-segment
    sample instead of pooling the whole sample. Returns a report dict
    with the macro F1 and a per-label breakdown keyed by label name.
    """
    if not dataset.samples:
        raise ArgumentError(f"dataset {dataset.name!r} has no samples")
    if k is None:
        k = default_k(dataset)
    feats_list = []
    truth = []
    for s in dataset.samples:
        if segment_level:
            for row in s.features:
                feats_list.append(row[None, :])
                truth.append(s.label_indices)
        else:
            feats_list.append(s.features)
            truth.append(s.label_indices)
    outputs = batched_forward(params, feats_list, with_grad=False).data
    label_matrix = dataset.label_space.embedding.data
    predicted = [
        rank_by_distance(out, label_matrix, k).indices for out in outputs
    ]
    n = dataset.label_space.size
    f1s = per_label_f1(predicted, truth, n)
    return {
        "dataset": dataset.name,
        "split": dataset.split,
        "k": k,
        "segment_level": segment_level,
        "n_scored": len(feats_list),
        "macro_f1": float(f1s.mean()),
        "per_label": {name: float(f1s[i]) for i, name in enumerate(dataset.label_space.names)},
    }
