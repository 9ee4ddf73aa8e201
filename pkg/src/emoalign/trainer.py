"""Optimization loop: AdamW, plateau scheduling, and deterministic epochs.

The fit loop trains one projector on one or more datasets conjointly.
Per dataset a seeded validation fraction is split off (stratified by
each sample's first true label); the remaining samples form one pooled
training set that is reshuffled every epoch. After each epoch the
validation macro F1 is computed per dataset against that dataset's own
label space and averaged; a reduce-on-plateau schedule watches that
metric, and the parameters of the best-scoring epoch are what fit
returns. Every random draw flows from the config seed, so identical
inputs give bit-identical parameters and history.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import ClusterModel
from .data import Dataset, merge_label_spaces
from .errors import ArgumentError, NumericError, ValidationError
from .evaluate import default_k, macro_f1, rank_by_distance
from .objectives import BatchContext, ObjectiveConfig, total_loss
from .projector import (
    ProjectorConfig,
    ProjectorParams,
    batched_forward,
    init_projector,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 2e-4
    min_lr: float = 1.6e-7
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    eval_k: dict = field(default_factory=dict)  # dataset name -> k

    def __post_init__(self):
        if not (0 < self.min_lr <= self.lr):
            raise ArgumentError(f"need 0 < min_lr <= lr, got {self.min_lr} and {self.lr}")
        if not (0 < self.plateau_factor < 1):
            raise ArgumentError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if not (0 < self.val_fraction < 1):
            raise ArgumentError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ArgumentError("epochs must be >= 0 and batch_size >= 1")


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)  # tensor name -> first moment
    v: dict = field(default_factory=dict)  # tensor name -> second moment

    @classmethod
    def for_params(cls, params: ProjectorParams) -> "AdamWState":
        state = cls()
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adamw_step(
    params: ProjectorParams,
    grads: dict,
    state: AdamWState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Decay is applied first (p <- p - lr*wd*p), then the bias-corrected
    Adam step. State carries per-tensor moments plus the shared step
    count.
    """
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name, tensor in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for tensor {name}")
        if cfg.weight_decay:
            tensor.data -= lr * cfg.weight_decay * tensor.data
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        tensor.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


# ---------------------------------------------------------------------------
# reduce-on-plateau (maximize mode)
# ---------------------------------------------------------------------------


@dataclass
class PlateauState:
    best: float = -np.inf
    bad_epochs: int = 0


def plateau_step(
    state: PlateauState,
    metric: float,
    lr: float,
    factor: float,
    patience: int,
    min_lr: float,
) -> float:
    """Update plateau state with this epoch's metric; returns the new lr.

    The best metric updates on strict improvement. Once more than
    `patience` consecutive epochs fail to improve, the rate is cut by
    `factor` (never below `min_lr`) and the counter resets.
    """
    if not np.isfinite(metric):
        raise NumericError(f"validation metric is not finite: {metric}")
    if metric > state.best:
        state.best = metric
        state.bad_epochs = 0
        return lr
    state.bad_epochs += 1
    if state.bad_epochs > patience:
        state.bad_epochs = 0
        return max(lr * factor, min_lr)
    return lr


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    align_loss: list[float] = field(default_factory=list)
    reg_loss: list[float] = field(default_factory=list)
    val_macro_f1: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    @property
    def best_epoch(self) -> int:
        if not self.val_macro_f1:
            raise ArgumentError("empty history has no best epoch")
        return int(np.argmax(self.val_macro_f1))

    def to_jsonl(self, path: str | Path, include_timing: bool = False) -> None:
        """One epoch per line. Timing is off by default so that identical
        runs write identical bytes."""
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(len(self)):
                row = {
                    "epoch": i,
                    "train_loss": self.train_loss[i],
                    "align_loss": self.align_loss[i],
                    "reg_loss": self.reg_loss[i],
                    "val_macro_f1": self.val_macro_f1[i],
                    "lr": self.lr[i],
                }
                if include_timing:
                    row["wall_time"] = self.wall_time[i]
                fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _stratified_split(
    dataset: Dataset, fraction: float, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Seeded per-dataset split, stratified by each sample's first true label."""
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(dataset.samples):
        groups.setdefault(s.label_indices[0], []).append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for key in sorted(groups):
        members = groups[key]
        perm = rng.permutation(len(members))
        n_val = int(len(members) * fraction)
        for pos, p in enumerate(perm):
            (val_idx if pos < n_val else train_idx).append(members[p])
    if not val_idx and len(dataset.samples) >= 2:
        # tiny dataset: still hold out one sample so the metric exists
        val_idx.append(train_idx.pop())
    return sorted(train_idx), sorted(val_idx)


def _validation_f1(params: ProjectorParams, val_sets: list[dict]) -> float:
    scores = []
    for vs in val_sets:
        if not vs["features"]:
            continue
        outputs = batched_forward(params, vs["features"], with_grad=False).data
        predicted = [
            rank_by_distance(out, vs["label_matrix"], vs["k"]).indices
            for out in outputs
        ]
        scores.append(macro_f1(predicted, vs["truth"], vs["n_labels"]))
    return float(np.mean(scores)) if scores else 0.0


def fit(
    datasets: Sequence[Dataset],
    clusters: ClusterModel,
    cluster_names: Sequence[str],
    cfg: TrainConfig,
) -> tuple[ProjectorParams, TrainHistory]:
    """Train a projector on the given datasets conjointly.

    `clusters` must cover the union of the datasets' label spaces;
    `cluster_names` gives the label name behind each assignment slot so
    coverage does not depend on construction order. Returns the
    parameters of the best-validation epoch plus the full history.
    """
    if not datasets:
        raise ArgumentError("need at least one dataset")
    union, maps = merge_label_spaces([d.label_space for d in datasets])
    if cfg.projector.out_dim != union.cols:
        raise ValidationError(
            f"projector out_dim {cfg.projector.out_dim} does not match the "
            f"{union.cols}-dim label embeddings"
        )
    for d in datasets:
        if d.samples and d.feature_dim != cfg.projector.d_in:
            raise ValidationError(
                f"dataset {d.name!r} has {d.feature_dim}-dim features, "
                f"projector expects {cfg.projector.d_in}"
            )
    if len(cluster_names) != len(clusters.assignment):
        raise ValidationError(
            f"{len(cluster_names)} cluster names for "
            f"{len(clusters.assignment)} assignment slots"
        )
    name_to_cluster = dict(zip(cluster_names, clusters.assignment))
    missing = [n for n in union.names if n not in name_to_cluster]
    if missing:
        raise ValidationError(
            f"cluster model does not cover labels: {missing[:5]}"
        )
    global_assignment = tuple(name_to_cluster[n] for n in union.names)
    counts = [0] * clusters.n_clusters
    for a in global_assignment:
        counts[a] += 1
    model = ClusterModel(
        centers=clusters.centers,
        bandwidth=clusters.bandwidth,
        assignment=global_assignment,
        member_counts=tuple(counts),
    )

    seed_seq = np.random.SeedSequence(cfg.seed)
    sq_init, sq_split, sq_shuffle, sq_neg, sq_drop = seed_seq.spawn(5)
    params = init_projector(cfg.projector, seed=int(sq_init.generate_state(1)[0]))
    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history

    rng_split = np.random.default_rng(sq_split)
    train_feats: list[np.ndarray] = []
    train_labels: list[tuple[int, ...]] = []
    val_sets: list[dict] = []
    for ds, local_map in zip(datasets, maps):
        tr, va = _stratified_split(ds, cfg.val_fraction, rng_split)
        for i in tr:
            s = ds.samples[i]
            train_feats.append(s.features)
            train_labels.append(tuple(local_map[j] for j in s.label_indices))
        val_sets.append(
            {
                "name": ds.name,
                "features": [ds.samples[i].features for i in va],
                "truth": [ds.samples[i].label_indices for i in va],
                "label_matrix": ds.label_space.embedding.data,
                "n_labels": ds.label_space.size,
                "k": cfg.eval_k.get(ds.name, default_k(ds)),
            }
        )
    if not train_feats:
        raise ArgumentError("training pool is empty after the validation split")

    rng_shuffle = np.random.default_rng(sq_shuffle)
    rng_neg = np.random.default_rng(sq_neg)
    rng_drop = np.random.default_rng(sq_drop) if cfg.projector.dropout > 0 else None
    opt_state = AdamWState.for_params(params)
    plateau = PlateauState()
    lr = cfg.lr
    best_f1 = -np.inf
    best_params = params.copy()
    n_train = len(train_feats)
    started = time.perf_counter()

    for _epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(n_train)
        sums = {"total": 0.0, "align": 0.0, "reg": 0.0}
        for lo in range(0, n_train, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            outputs = batched_forward(
                params, [train_feats[i] for i in batch], dropout_rng=rng_drop
            )
            ctx = BatchContext(
                outputs=outputs,
                true_labels=tuple(train_labels[i] for i in batch),
                label_embeddings=union.data,
                clusters=model,
            )
            breakdown = total_loss(ctx, cfg.objective, rng_neg)
            params.zero_grads()
            breakdown.total.backward()
            grads = {
                name: t.grad if t.grad is not None else np.zeros_like(t.data)
                for name, t in params.items()
            }
            adamw_step(params, grads, opt_state, lr, cfg)
            b = len(batch)
            sums["total"] += float(breakdown.total.data) * b
            sums["align"] += float(breakdown.align.data) * b
            sums["reg"] += float(breakdown.reg.data) * b

        val_f1 = _validation_f1(params, val_sets)
        history.train_loss.append(sums["total"] / n_train)
        history.align_loss.append(sums["align"] / n_train)
        history.reg_loss.append(sums["reg"] / n_train)
        history.val_macro_f1.append(val_f1)
        history.lr.append(lr)
        history.wall_time.append(time.perf_counter() - started)
        lr = plateau_step(
            plateau, val_f1, lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr
        )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_params = params.copy()

    return best_params, history
