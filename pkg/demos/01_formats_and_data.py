#!/usr/bin/env python3
"""Walk through the data layer: binary matrices, manifests, label derivation.

Everything that crosses a process boundary in this project is either an
EMBMAT01 matrix file or a JSON-Lines manifest. This script writes both,
reads them back, and shows the two rating-aggregation rules used to turn
multi-annotator scores into multi-hot label sets.
"""

import tempfile
from pathlib import Path

import numpy as np

from emoalign import (
    EmbeddingMatrix,
    RatingsTable,
    derive_labels_mean_threshold,
    derive_labels_top_k,
    read_embedding_matrix,
    write_embedding_matrix,
)

workdir = Path(tempfile.mkdtemp(prefix="emoalign-demo-"))
print(f"working in {workdir}\n")

# --- EMBMAT01: the embedding interchange format --------------------------
# 8-byte magic, u32 rows, u32 cols, float32 payload, names in a sidecar.
rng = np.random.default_rng(0)
labels = EmbeddingMatrix(
    data=rng.standard_normal((4, 8)),
    names=("happy", "joyful", "melancholic", "tense"),
)
path = workdir / "labels.emb"
write_embedding_matrix(labels, path)
print(f"wrote {path.stat().st_size} bytes "
      f"(16 header + 4*{labels.rows}*{labels.cols} payload)")

back = read_embedding_matrix(path)
print(f"read back {back.rows}x{back.cols} with names {back.names}")
assert back.names == labels.names

# --- deriving labels from aggregated ratings ------------------------------
# Rule 1: keep labels whose mean rating clears a threshold; if nothing
# does, fall back to the single best label so no sample ends up empty.
table = RatingsTable(
    sample_ids=("song-a", "song-b"),
    label_names=("happy", "joyful", "melancholic"),
    ratings=[[3.5, 2.0, 3.0],
             [2.0, 2.5, 1.0]],
)
picked = derive_labels_mean_threshold(table, threshold=3.0)
for sid, indices in zip(table.sample_ids, picked):
    names = [table.label_names[i] for i in indices]
    print(f"threshold rule: {sid} -> {names}")

# Rule 2: always keep the top-k rated labels (ties to the lower index).
table2 = RatingsTable(
    sample_ids=("song-c",),
    label_names=("amazement", "solemnity", "tenderness", "nostalgia", "power"),
    ratings=[[5.0, 1.0, 4.0, 4.0, 2.0]],
)
topk = derive_labels_top_k(table2, k=3)
print(f"top-3 rule: song-c -> {[table2.label_names[i] for i in topk[0]]}")
