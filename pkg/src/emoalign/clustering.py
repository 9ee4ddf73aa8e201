"""Mean-shift clustering of label embeddings, flat kernel, fully deterministic.

Every input point is a seed. A seed repeatedly moves to the mean of all
points within Euclidean radius `bandwidth` (inclusive) until the shift
drops below 1e-3 * bandwidth or 300 iterations pass. Converged modes
closer than `bandwidth` to one another are merged, keeping the mode with
more in-radius support; ties keep the lexicographically smaller
coordinate vector. Finally every point is assigned to its nearest
surviving center (ties to the lowest center index).

At the scale this package cares about (tens of labels) exactness beats
speed, so there is no bin seeding and no approximate neighbor search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import EmbeddingMatrix
from .errors import ArgumentError, DegenerateInputError, DimensionError, ValidationError

CONVERGENCE_FACTOR = 1e-3
MAX_ITER = 300


@dataclass(frozen=True)
class ClusterModel:
    """Mean-shift output: centers, bandwidth, and per-label assignment."""

    centers: np.ndarray  # K x m
    bandwidth: float
    assignment: tuple[int, ...]  # label index -> cluster index
    member_counts: tuple[int, ...]

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64, order="C")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        object.__setattr__(
            self, "member_counts", tuple(int(c) for c in self.member_counts)
        )
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ValidationError(f"need K >= 1 centers, got shape {centers.shape}")
        if self.bandwidth <= 0:
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        k = centers.shape[0]
        if any(a < 0 or a >= k for a in self.assignment):
            raise ValidationError("assignment references a nonexistent cluster")
        if len(self.member_counts) != k:
            raise ValidationError("member_counts length must equal cluster count")

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def clusters_of(self, label_indices: Sequence[int]) -> frozenset[int]:
        return frozenset(self.assignment[i] for i in label_indices)


def estimate_bandwidth(points: EmbeddingMatrix, quantile: float = 0.3) -> float:
    """Mean distance from each point to its ceil(quantile*(N-1))-th nearest other.

    Scales linearly with the point cloud. Identical points give zero,
    which is unusable as a kernel radius, so that case is refused.
    """
    if not (0.0 < quantile <= 1.0):
        raise ArgumentError(f"quantile must be in (0, 1], got {quantile}")
    x = points.data
    n = x.shape[0]
    if n < 2:
        raise ArgumentError(f"bandwidth estimation needs at least 2 points, got {n}")
    k = int(np.ceil(quantile * (n - 1)))
    dists = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    total = 0.0
    for i in range(n):
        others = np.sort(np.delete(dists[i], i))
        total += others[k - 1]
    bandwidth = total / n
    if bandwidth == 0.0:
        raise DegenerateInputError(
            "all points coincide; pass an explicit bandwidth instead"
        )
    return float(bandwidth)


def _shift_seed(seed: np.ndarray, x: np.ndarray, bandwidth: float) -> np.ndarray:
    """Iterate one seed to convergence against the immutable point set."""
    tol = CONVERGENCE_FACTOR * bandwidth
    for _ in range(MAX_ITER):
        within = np.linalg.norm(x - seed, axis=1) <= bandwidth
        if not within.any():
            break  # isolated seed stays put, becomes a singleton mode
        new = x[within].mean(axis=0)
        shift = float(np.linalg.norm(new - seed))
        seed = new
        if shift < tol:
            break
    return seed


def mean_shift(points: EmbeddingMatrix, bandwidth: float) -> ClusterModel:
    """Cluster `points` with flat-kernel mean shift at the given bandwidth."""
    if bandwidth <= 0:
        raise ArgumentError(f"bandwidth must be positive, got {bandwidth}")
    x = points.data
    n = x.shape[0]
    if n < 1:
        raise ArgumentError("mean_shift needs at least one point")

    modes = np.array([_shift_seed(x[i].copy(), x, bandwidth) for i in range(n)])
    support = np.array(
        [(np.linalg.norm(x - m, axis=1) <= bandwidth).sum() for m in modes]
    )

    # Merge modes closer than bandwidth; stronger support wins, ties go to
    # the lexicographically smaller coordinate vector.
    order = sorted(range(n), key=lambda i: (-support[i], tuple(modes[i])))
    centers: list[np.ndarray] = []
    for i in order:
        if all(np.linalg.norm(modes[i] - c) >= bandwidth for c in centers):
            centers.append(modes[i])
    centers_arr = np.array(centers)

    dists = np.linalg.norm(x[:, None, :] - centers_arr[None, :, :], axis=2)
    assignment = tuple(int(np.argmin(dists[i])) for i in range(n))
    counts = tuple(int(sum(1 for a in assignment if a == k)) for k in range(len(centers)))
    return ClusterModel(
        centers=centers_arr,
        bandwidth=float(bandwidth),
        assignment=assignment,
        member_counts=counts,
    )


def assign(point: np.ndarray, model: ClusterModel) -> int:
    """Index of the Euclidean-nearest center; ties go to the lowest index."""
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (model.dim,):
        raise DimensionError(
            f"point has shape {point.shape}, centers have dim {model.dim}"
        )
    return int(np.argmin(np.linalg.norm(model.centers - point, axis=1)))


# ---------------------------------------------------------------------------
# serialization and graph export
# ---------------------------------------------------------------------------


def save_cluster_model(model: ClusterModel, names: Sequence[str], path: str | Path) -> None:
    if len(names) != len(model.assignment):
        raise ValidationError(
            f"{len(names)} names for {len(model.assignment)} assigned labels"
        )
    doc = {
        "bandwidth": model.bandwidth,
        "centers": [list(map(float, c)) for c in model.centers],
        "assignment": {name: int(k) for name, k in zip(names, model.assignment)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_cluster_model(path: str | Path) -> tuple[ClusterModel, tuple[str, ...]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("bandwidth", "centers", "assignment"):
        if key not in doc:
            raise ValidationError(f"{path}: cluster model missing {key!r}")
    names = tuple(doc["assignment"].keys())
    assignment = tuple(int(doc["assignment"][n]) for n in names)
    counts = [0] * len(doc["centers"])
    for a in assignment:
        counts[a] += 1
    model = ClusterModel(
        centers=np.asarray(doc["centers"], dtype=np.float64),
        bandwidth=float(doc["bandwidth"]),
        assignment=assignment,
        member_counts=tuple(counts),
    )
    return model, names


def _palette(k: int) -> list[str]:
    # Evenly spaced hues in DOT's "H S V" color syntax.
    return [f"{i / k:.4f} 0.6000 0.8500" for i in range(k)]


def export_cluster_graph(model: ClusterModel, names: Sequence[str]) -> str:
    """Render the assignment as a DOT graph.

    One filled node per label; nodes of a cluster share a color and are
    chained together by undirected edges in label order, so each
    cluster's node count exceeds its edge count by exactly one.
    """
    if len(names) != len(model.assignment):
        raise ValidationError(
            f"{len(names)} names for {len(model.assignment)} assigned labels"
        )
    colors = _palette(model.n_clusters)
    lines = ["graph label_clusters {", "  node [style=filled];"]
    for name, k in zip(names, model.assignment):
        lines.append(f'  "{name}" [fillcolor="{colors[k]}"];')
    for k in range(model.n_clusters):
        members = [n for n, a in zip(names, model.assignment) if a == k]
        for a, b in zip(members, members[1:]):
            lines.append(f'  "{a}" -- "{b}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
