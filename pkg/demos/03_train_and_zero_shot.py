#!/usr/bin/env python3
"""Train the projector and predict over labels it has never seen.

Three synthetic datasets share latent concepts but use disjoint label
vocabularies. The projector trains on the first two (targets are the
mean-shift cluster centroids of their merged label embeddings, plus the
negative-pair alignment regularizer) and is then scored on the third
dataset, whose labels never appeared in training: classic zero-shot
transfer through the shared embedding space.

Takes roughly half a minute on one core.
"""

import numpy as np

from emoalign import ExperimentSpec, SynthSpec, generate_synthetic, run_experiment_on

spec = SynthSpec(
    concepts=3, labels_per_concept=4, datasets=3,
    samples_per_dataset=(200, 200, 100), test_samples_per_dataset=(50, 50, 100),
    segments=2, label_dim=10, feature_dim=32,
    label_noise=0.6, feature_noise=1.5,
)
datasets, _ = generate_synthetic(spec, seed=0)
tr0, te0, tr1, te1, tr2, te2 = datasets
print(f"train vocab: {tr0.label_space.names[:2]} + {tr1.label_space.names[:2]} ...")
print(f"held-out vocab (never trained on): {te2.label_space.names[:2]} ...\n")

common = dict(
    k={"synth0": 4, "synth1": 4, "synth2": 4},
    seed=0,
    train_config={"epochs": 50, "batch_size": 32, "lr": 3e-3},
    projector={"d_model": 32, "heads": 4, "ffn_mult": 2},
)

zero_shot = {}

exp = ExperimentSpec(phase="baseline1", train=("synth0",), test=("synth2",), **common)
result = run_experiment_on(exp, [tr0], [te2])
zero_shot["baseline1"] = result.report["results"]["synth2"]["macro_f1"]
print("baseline1 (single dataset, label targets):")
print(f"  zero-shot macro-F1 on synth2: {zero_shot['baseline1']:.3f}\n")

for phase, lam in (("baseline2", 0.0), ("align_reg", 2.5)):
    exp = ExperimentSpec(
        phase=phase, train=("synth0", "synth1"),
        test=("synth0", "synth1", "synth2"), lam=lam, **common,
    )
    result = run_experiment_on(exp, [tr0, tr1], [te0, te1, te2])
    scores = {n: r["macro_f1"] for n, r in result.report["results"].items()}
    zero_shot[phase] = scores["synth2"]
    print(f"{phase} (two datasets conjointly, lambda={lam}):")
    print(f"  in-domain macro-F1: synth0 {scores['synth0']:.3f}, "
          f"synth1 {scores['synth1']:.3f}")
    print(f"  zero-shot macro-F1 on synth2: {scores['synth2']:.3f}\n")

print("training against aligned clusters transfers to the unseen vocabulary")
print(f"far better than single-dataset training ({zero_shot['align_reg']:.3f} "
      f"vs {zero_shot['baseline1']:.3f} zero-shot macro-F1).")
