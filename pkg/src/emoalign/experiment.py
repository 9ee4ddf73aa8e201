"""Declarative experiment harness for the three training regimes.

A spec names a phase, the datasets to train on, the test sets to score,
and the knobs (lambda, k per dataset, seed, clustering quantile or an
explicit bandwidth). The three phases differ only in objective wiring:

  baseline1   single training dataset, label-embedding targets, no reg
  baseline2   two datasets conjointly, cluster-centroid targets, no reg
  align_reg   baseline2 plus pairwise alignment regularization

Whatever the phase trained against, scoring always ranks the test
dataset's own label embeddings, so a held-out dataset with fresh labels
is scored zero-shot with no retraining. Reports are a pure function of
(spec, data): no timestamps, no environment probes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, estimate_bandwidth, mean_shift, save_cluster_model
from .data import Dataset, load_dataset, merge_label_spaces
from .errors import ArgumentError, ValidationError
from .evaluate import DATASET_EVAL_K, default_k, evaluate
from .objectives import ObjectiveConfig
from .projector import ProjectorConfig, ProjectorParams, save_checkpoint
from .trainer import TrainConfig, TrainHistory, fit

PHASES = ("baseline1", "baseline2", "align_reg")


@dataclass(frozen=True)
class ExperimentSpec:
    phase: str
    train: tuple[str, ...]
    test: tuple[str, ...]
    lam: float = 0.0
    reg_mode: str = "negative"
    k: dict = field(default_factory=dict)  # dataset name -> top-k
    seed: int = 0
    quantile: float = 0.3
    bandwidth: float | None = None
    segment_level: bool = False
    manifests: dict = field(default_factory=dict)  # name -> {"train": p, "test": p}
    train_config: dict = field(default_factory=dict)  # TrainConfig overrides
    projector: dict = field(default_factory=dict)  # ProjectorConfig overrides
    objective: dict = field(default_factory=dict)  # ObjectiveConfig overrides

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        if self.phase not in PHASES:
            raise ValidationError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.phase == "baseline1" and len(self.train) != 1:
            raise ValidationError(
                f"baseline1 trains on exactly one dataset, got {list(self.train)}"
            )
        if self.phase in ("baseline2", "align_reg") and len(self.train) != 2:
            raise ValidationError(
                f"{self.phase} trains on exactly two datasets, got {list(self.train)}"
            )
        if not self.test:
            raise ValidationError("need at least one test dataset")
        if self.reg_mode not in ("negative", "positive"):
            raise ValidationError(
                f"reg_mode must be 'negative' or 'positive', got {self.reg_mode!r}"
            )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown experiment spec keys: {sorted(unknown)}")
        if "train" in doc:
            doc["train"] = tuple(doc["train"])
        if "test" in doc:
            doc["test"] = tuple(doc["test"])
        return cls(**doc)


@dataclass
class ExperimentResult:
    report: dict
    params: ProjectorParams
    history: TrainHistory
    clusters: ClusterModel
    cluster_names: tuple[str, ...]


def _objective_for(spec: ExperimentSpec) -> ObjectiveConfig:
    if spec.phase == "baseline1":
        base = {"target_mode": "label", "lam": 0.0, "reg_mode": "off"}
    elif spec.phase == "baseline2":
        base = {"target_mode": "centroid", "lam": 0.0, "reg_mode": "off"}
    else:
        base = {"target_mode": "centroid", "lam": spec.lam, "reg_mode": spec.reg_mode}
    base.update(spec.objective)
    return ObjectiveConfig(**base)


def run_experiment_on(
    spec: ExperimentSpec,
    train_datasets: list[Dataset],
    test_datasets: list[Dataset],
) -> ExperimentResult:
    """Run one experiment on already-loaded datasets."""
    by_name = {d.name: d for d in train_datasets}
    if set(by_name) != set(spec.train):
        raise ArgumentError(
            f"spec trains on {list(spec.train)}, got datasets {sorted(by_name)}"
        )
    ordered_train = [by_name[n] for n in spec.train]

    union, _ = merge_label_spaces([d.label_space for d in ordered_train])
    bandwidth = spec.bandwidth
    if bandwidth is None:
        bandwidth = estimate_bandwidth(union, spec.quantile)
    clusters = mean_shift(union, bandwidth)

    projector_defaults = {"d_in": ordered_train[0].feature_dim, "out_dim": union.cols}
    projector_defaults.update(spec.projector)
    projector_cfg = ProjectorConfig(**projector_defaults)
    train_cfg = TrainConfig(
        seed=spec.seed,
        objective=_objective_for(spec),
        projector=projector_cfg,
        eval_k=dict(spec.k),
        **spec.train_config,
    )
    params, history = fit(ordered_train, clusters, union.names, train_cfg)

    results = {}
    for ds in test_datasets:
        k = spec.k.get(ds.name, DATASET_EVAL_K.get(ds.name, default_k(ds)))
        results[ds.name] = evaluate(params, ds, k, segment_level=spec.segment_level)

    report = {
        "spec": asdict(spec),
        "clusters": {
            "bandwidth": clusters.bandwidth,
            "n_clusters": clusters.n_clusters,
        },
        "best_epoch": history.best_epoch if len(history) else None,
        "results": results,
        "history_path": None,
    }
    return ExperimentResult(
        report=report,
        params=params,
        history=history,
        clusters=clusters,
        cluster_names=union.names,
    )


def run_experiment(spec: ExperimentSpec, data_root: str | Path) -> ExperimentResult:
    """Load the spec's manifests relative to `data_root` and run it."""
    data_root = Path(data_root)

    def _load(name: str, split: str) -> Dataset:
        entry = spec.manifests.get(name)
        if not entry or split not in entry:
            raise ValidationError(
                f"spec has no {split!r} manifest for dataset {name!r}"
            )
        ds = load_dataset(data_root / entry[split])
        if ds.name != name:
            raise ValidationError(
                f"manifest {entry[split]!r} declares dataset {ds.name!r}, "
                f"spec expects {name!r}"
            )
        return ds

    train_datasets = [_load(n, "train") for n in spec.train]
    test_datasets = [_load(n, "test") for n in spec.test]
    return run_experiment_on(spec, train_datasets, test_datasets)


def write_experiment_outputs(
    result: ExperimentResult, report_path: str | Path
) -> dict[str, str]:
    """Write report JSON, history JSONL, checkpoint, and clusters JSON.

    Sibling files share the report's stem. All outputs are byte-stable
    for identical (spec, data): history timing is omitted and checkpoint
    metadata records only the spec and a cluster digest.
    """
    report_path = Path(report_path)
    stem = report_path.with_suffix("")
    history_path = Path(f"{stem}.history.jsonl")
    ckpt_path = Path(f"{stem}.ckpt")
    clusters_path = Path(f"{stem}.clusters.json")

    result.history.to_jsonl(history_path)
    save_cluster_model(result.clusters, result.cluster_names, clusters_path)
    cluster_digest = hashlib.sha256(clusters_path.read_bytes()).hexdigest()
    save_checkpoint(
        result.params,
        {"spec": result.report["spec"], "clusters_sha256": cluster_digest},
        ckpt_path,
    )
    report = dict(result.report)
    report["history_path"] = history_path.name
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return {
        "report": str(report_path),
        "history": str(history_path),
        "checkpoint": str(ckpt_path),
        "clusters": str(clusters_path),
    }
