"""Command-line surface.

Subcommands: cluster, train, eval, predict, synth, graph, experiment.
Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
error. All randomness flows from explicit seeds, stdout carries a short
human summary, and files carry the machine-readable output, so two
identical invocations write byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .clustering import (
    estimate_bandwidth,
    export_cluster_graph,
    load_cluster_model,
    mean_shift,
    save_cluster_model,
)
from .data import (
    LabelSpace,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    merge_label_spaces,
    read_embedding_matrix,
    write_dataset,
)
from .errors import ArgumentError, DataError, EmoAlignError, NumericError, ValidationError
from .evaluate import DATASET_EVAL_K, default_k, evaluate, rank_by_distance
from .experiment import ExperimentSpec, run_experiment, write_experiment_outputs
from .objectives import ObjectiveConfig
from .projector import ProjectorConfig, batched_forward, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, fit

CONFIG_SECTIONS = {
    "projector": ProjectorConfig,
    "train": TrainConfig,
    "objective": ObjectiveConfig,
}
TRAIN_SCALAR_FIELDS = (
    "epochs", "batch_size", "lr", "min_lr", "plateau_factor", "plateau_patience",
    "weight_decay", "beta1", "beta2", "adam_eps", "val_fraction", "seed",
)


def load_cli_config(path: str | Path) -> dict:
    """Read a config file: {"projector": {...}, "train": {...},
    "objective": {...}, "eval_k": {...}}. Unknown keys anywhere reject."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    allowed = set(CONFIG_SECTIONS) | {"eval_k"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    for section, cls in CONFIG_SECTIONS.items():
        entries = doc.get(section, {})
        valid = {f.name for f in dataclasses.fields(cls)}
        if section == "train":
            valid = set(TRAIN_SCALAR_FIELDS)
        bad = set(entries) - valid
        if bad:
            raise ValidationError(f"{path}: unknown {section} keys {sorted(bad)}")
    return doc


def _comma_paths(arg: str) -> list[Path]:
    return [Path(p) for p in arg.split(",") if p]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_cluster(args) -> int:
    spaces = [
        LabelSpace(embedding=read_embedding_matrix(p), source=str(p))
        for p in _comma_paths(args.labels)
    ]
    union, _ = merge_label_spaces(spaces)
    if args.bandwidth is not None:
        bandwidth = args.bandwidth
    else:
        bandwidth = estimate_bandwidth(union, args.quantile)
    model = mean_shift(union, bandwidth)
    save_cluster_model(model, union.names, args.out)
    print(
        f"clustered {union.rows} labels into {model.n_clusters} clusters "
        f"(bandwidth {model.bandwidth:.6g}) -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    datasets = [load_dataset(p) for p in _comma_paths(args.manifest)]
    clusters, cluster_names = load_cluster_model(args.clusters)
    doc = load_cli_config(args.config) if args.config else {}

    union, _ = merge_label_spaces([d.label_space for d in datasets])
    projector_kwargs = {"d_in": datasets[0].feature_dim, "out_dim": union.cols}
    projector_kwargs.update(doc.get("projector", {}))
    projector = ProjectorConfig(**projector_kwargs)

    objective_kwargs = dict(doc.get("objective", {}))
    if args.lam is not None:
        objective_kwargs["lam"] = args.lam
    if args.reg is not None:
        objective_kwargs["reg_mode"] = args.reg
    if args.target is not None:
        objective_kwargs["target_mode"] = args.target
    objective = ObjectiveConfig(**objective_kwargs)

    train_kwargs = dict(doc.get("train", {}))
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    cfg = TrainConfig(
        objective=objective,
        projector=projector,
        eval_k={str(k): int(v) for k, v in doc.get("eval_k", {}).items()},
        **train_kwargs,
    )

    params, history = fit(datasets, clusters, cluster_names, cfg)
    clusters_digest = hashlib.sha256(Path(args.clusters).read_bytes()).hexdigest()
    metadata = {
        "train_config": {
            **{f: getattr(cfg, f) for f in TRAIN_SCALAR_FIELDS},
            "objective": dataclasses.asdict(cfg.objective),
            "eval_k": cfg.eval_k,
        },
        "datasets": [d.name for d in datasets],
        "clusters_sha256": clusters_digest,
    }
    save_checkpoint(params, metadata, args.out)
    history.to_jsonl(Path(str(args.out) + ".history.jsonl"))
    best = max(history.val_macro_f1) if len(history) else float("nan")
    print(
        f"trained on {'+'.join(d.name for d in datasets)} for {cfg.epochs} epochs; "
        f"best val macro-F1 {best:.4f} -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    params, metadata = load_checkpoint(args.model)
    dataset = load_dataset(args.manifest)
    k = args.k if args.k is not None else DATASET_EVAL_K.get(
        dataset.name, default_k(dataset)
    )
    report = evaluate(params, dataset, k, segment_level=args.segment_level)
    report["model"] = str(args.model)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(
        f"{dataset.name} ({dataset.split}, k={k}): "
        f"macro-F1 {report['macro_f1']:.4f} -> {args.out}"
    )
    return 0


def cmd_predict(args) -> int:
    params, _ = load_checkpoint(args.model)
    feats = read_embedding_matrix(args.features)
    space = LabelSpace(embedding=read_embedding_matrix(args.label_space))
    output = batched_forward(params, [feats.data], with_grad=False).data[0]
    result = rank_by_distance(output, space.embedding.data, args.k)
    for rank, (idx, dist) in enumerate(zip(result.indices, result.distances), 1):
        print(f"{rank}. {space.names[idx]}  (cosine distance {dist:.6f})")
    return 0


def cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        doc = json.load(fh)
    valid = {f.name for f in dataclasses.fields(SynthSpec)}
    unknown = set(doc) - valid
    if unknown:
        raise ValidationError(f"{args.spec}: unknown synth spec keys {sorted(unknown)}")
    for key in ("samples_per_dataset", "test_samples_per_dataset"):
        if isinstance(doc.get(key), list):
            doc[key] = tuple(doc[key])
    spec = SynthSpec(**doc)
    datasets, _ = generate_synthetic(spec, args.seed)
    out = Path(args.out)
    manifests = [write_dataset(ds, out) for ds in datasets]
    with open(out / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump({"spec": doc, "seed": args.seed}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote {len(datasets)} dataset splits under {out}:")
    for m in manifests:
        print(f"  {m}")
    return 0


def cmd_graph(args) -> int:
    model, names = load_cluster_model(args.clusters)
    dot = export_cluster_graph(model, names)
    Path(args.out).write_text(dot, encoding="utf-8")
    print(f"{len(names)} labels, {model.n_clusters} clusters -> {args.out}")
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_json(args.spec)
    data_root = Path(args.data_root) if args.data_root else Path(args.spec).parent
    result = run_experiment(spec, data_root)
    paths = write_experiment_outputs(result, args.out)
    print(f"experiment {spec.phase} (seed {spec.seed}):")
    for name, rep in result.report["results"].items():
        tag = "zero-shot" if name not in spec.train else "in-domain"
        print(f"  {name}: macro-F1 {rep['macro_f1']:.4f} ({tag}, k={rep['k']})")
    print(f"report -> {paths['report']}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emoalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="mean-shift label embeddings")
    p.add_argument("--labels", required=True, help="comma-separated .emb files")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--quantile", type=float, default=0.3)
    group.add_argument("--bandwidth", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train a projector")
    p.add_argument("--manifest", required=True, help="comma-separated manifests")
    p.add_argument("--clusters", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--reg", choices=["negative", "positive", "off"])
    p.add_argument("--target", choices=["label", "centroid"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a test manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--segment-level", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-k labels for one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--label-space", required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate synthetic datasets")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="export the cluster graph as DOT")
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("experiment", help="run a declarative experiment")
    p.add_argument("--spec", required=True)
    p.add_argument("--data-root")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ArgumentError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except EmoAlignError as e:  # anything else from this package is data-ish
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
