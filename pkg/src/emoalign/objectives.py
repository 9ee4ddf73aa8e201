"""Training objectives: triplet alignment loss plus alignment regularization.

The alignment loss is a cosine triplet hinge: each projector output
(anchor) should be closer to the embedding of a true label (positive)
than to a sampled wrong label (negative), by at least the margin. The
standard orientation max(0, cos(neg) - cos(pos) + margin) is the
default; the reversed orientation is available behind `reversed_hinge`
but actively pushes anchors away from their true labels, so it exists
only for comparison runs.

The regularizer acts on pairs of projector outputs inside a batch.
Negative mode averages (1 - D) = cos over pairs whose true-label cluster
sets are disjoint (minimizing it pushes unrelated samples apart);
positive mode averages D = 1 - cos over pairs sharing a cluster
(minimizing it pulls related samples together). Both collapse to zero
with no gradient when a batch has no eligible pairs.

The combined objective is align + lambda * reg. Label embeddings and
cluster centers are constants; gradients flow only into the projector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .clustering import ClusterModel
from .diffmath import Tensor
from .errors import ArgumentError, DegenerateInputError

REG_MODES = ("negative", "positive", "off")
TARGET_MODES = ("label", "centroid")


@dataclass(frozen=True)
class ObjectiveConfig:
    margin: float = 0.2
    lam: float = 0.0
    reg_mode: str = "off"
    negatives_per_positive: int = 1
    target_mode: str = "label"
    reversed_hinge: bool = False

    def __post_init__(self):
        if not np.isfinite(self.margin) or self.margin < 0:
            raise ArgumentError(f"margin must be finite and >= 0, got {self.margin}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ArgumentError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.reg_mode not in REG_MODES:
            raise ArgumentError(f"reg_mode must be one of {REG_MODES}, got {self.reg_mode!r}")
        if self.target_mode not in TARGET_MODES:
            raise ArgumentError(
                f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}"
            )
        if self.negatives_per_positive < 1:
            raise ArgumentError("negatives_per_positive must be >= 1")


@dataclass
class BatchContext:
    """Everything the objectives need about one batch.

    `outputs` is the graph-connected B x m tensor of projector outputs;
    label embeddings and the cluster model are training constants.
    Cluster sets are always derived from the true labels through the
    cluster assignment, never passed in separately.
    """

    outputs: Tensor
    true_labels: tuple[tuple[int, ...], ...]
    label_embeddings: np.ndarray  # N x m
    clusters: ClusterModel
    true_clusters: tuple[frozenset[int], ...] = field(init=False)

    def __post_init__(self):
        if self.outputs.data.ndim != 2:
            raise ArgumentError("outputs must be a B x m tensor")
        if len(self.true_labels) != self.outputs.data.shape[0]:
            raise ArgumentError(
                f"{len(self.true_labels)} label sets for "
                f"{self.outputs.data.shape[0]} outputs"
            )
        self.true_labels = tuple(tuple(sorted(set(t))) for t in self.true_labels)
        n = self.label_embeddings.shape[0]
        if len(self.clusters.assignment) != n:
            raise ArgumentError(
                f"cluster model assigns {len(self.clusters.assignment)} labels, "
                f"embedding matrix has {n}"
            )
        self.true_clusters = tuple(
            self.clusters.clusters_of(t) for t in self.true_labels
        )

    @property
    def size(self) -> int:
        return self.outputs.data.shape[0]

    @property
    def n_labels(self) -> int:
        return self.label_embeddings.shape[0]


def sample_negative(sample_idx: int, ctx: BatchContext, rng: np.random.Generator) -> int:
    """Draw a wrong-label index for one sample, uniformly.

    Prefers labels whose cluster the sample does not touch; when the
    sample's true labels cover every cluster, falls back to any label
    outside the true set.
    """
    n = ctx.n_labels
    if n < 2:
        raise DegenerateInputError("cannot sample a negative from a 1-label space")
    own_clusters = ctx.true_clusters[sample_idx]
    eligible = [
        j for j in range(n) if ctx.clusters.assignment[j] not in own_clusters
    ]
    if not eligible:
        true = set(ctx.true_labels[sample_idx])
        eligible = [j for j in range(n) if j not in true]
    if not eligible:
        raise DegenerateInputError(
            "sample carries every label; no negative exists"
        )
    return eligible[int(rng.integers(len(eligible)))]


def triplet_align_loss(
    anchors: Tensor,
    positives: Tensor,
    negatives: Tensor,
    margin: float,
    reversed_hinge: bool = False,
) -> Tensor:
    """Mean cosine triplet hinge over matched rows of three K x m tensors."""
    if margin < 0:
        raise ArgumentError(f"margin must be >= 0, got {margin}")
    if not (anchors.data.shape == positives.data.shape == negatives.data.shape):
        raise ArgumentError(
            f"triplet shapes disagree: {anchors.data.shape}, "
            f"{positives.data.shape}, {negatives.data.shape}"
        )
    cos_pos = dm.rowwise_cosine(anchors, positives)
    cos_neg = dm.rowwise_cosine(anchors, negatives)
    gap = dm.sub(cos_pos, cos_neg) if reversed_hinge else dm.sub(cos_neg, cos_pos)
    return dm.mean_all(dm.relu(dm.add_const(gap, margin)))


def enumerate_reg_pairs(
    true_clusters: Sequence[frozenset[int]], mode: str
) -> list[tuple[int, int]]:
    """All i < j pairs eligible for the given regularization mode."""
    if mode not in ("negative", "positive"):
        raise ArgumentError(f"reg mode must be 'negative' or 'positive', got {mode!r}")
    pairs = []
    b = len(true_clusters)
    for i in range(b):
        for j in range(i + 1, b):
            disjoint = not (true_clusters[i] & true_clusters[j])
            if (mode == "negative") == disjoint:
                pairs.append((i, j))
    return pairs


def reg_loss(ctx: BatchContext, mode: str) -> Tensor:
    """Alignment regularization over eligible output pairs in the batch.

    Negative mode: mean cosine similarity of disjoint-cluster pairs
    (1 - D with D the cosine distance); this can go negative for
    anti-aligned pairs and is deliberately not clamped. Positive mode:
    mean cosine distance of same-cluster pairs. No eligible pairs gives
    a constant zero.
    """
    pairs = enumerate_reg_pairs(ctx.true_clusters, mode)
    if not pairs:
        return Tensor(0.0)
    left = dm.take_rows(ctx.outputs, [i for i, _ in pairs])
    right = dm.take_rows(ctx.outputs, [j for _, j in pairs])
    cos = dm.rowwise_cosine(left, right)
    if mode == "negative":
        return dm.mean_all(cos)
    return dm.mean_all(dm.add_const(dm.scale(cos, -1.0), 1.0))


@dataclass
class LossBreakdown:
    total: Tensor
    align: Tensor
    reg: Tensor  # raw regularizer value, before the lambda weight


def total_loss(
    ctx: BatchContext, cfg: ObjectiveConfig, rng: np.random.Generator
) -> LossBreakdown:
    """Combined objective align + lambda * reg for one batch.

    Alignment terms: one per (sample, true target, sampled negative)
    triple, averaged flat over all triples. In label target mode the
    targets are the sample's true label embeddings; in centroid mode
    they are the centers of the sample's true clusters (deduplicated,
    since synonymous labels share a center). Negatives come from
    `sample_negative` and are embedded the same way the targets are.
    """
    anchor_rows: list[int] = []
    pos_vecs: list[np.ndarray] = []
    neg_vecs: list[np.ndarray] = []
    centers = ctx.clusters.centers
    for i in range(ctx.size):
        if cfg.target_mode == "label":
            targets = [ctx.label_embeddings[t] for t in ctx.true_labels[i]]
        else:
            targets = [centers[k] for k in sorted(ctx.true_clusters[i])]
        for target in targets:
            for _ in range(cfg.negatives_per_positive):
                neg_label = sample_negative(i, ctx, rng)
                if cfg.target_mode == "label":
                    neg = ctx.label_embeddings[neg_label]
                else:
                    neg = centers[ctx.clusters.assignment[neg_label]]
                anchor_rows.append(i)
                pos_vecs.append(target)
                neg_vecs.append(neg)

    anchors = dm.take_rows(ctx.outputs, anchor_rows)
    align = triplet_align_loss(
        anchors,
        Tensor(np.array(pos_vecs)),
        Tensor(np.array(neg_vecs)),
        cfg.margin,
        cfg.reversed_hinge,
    )
    if cfg.reg_mode == "off":
        reg = Tensor(0.0)
        total = align
    else:
        reg = reg_loss(ctx, cfg.reg_mode)
        total = dm.add(align, dm.scale(reg, cfg.lam))
    return LossBreakdown(total=total, align=align, reg=reg)
