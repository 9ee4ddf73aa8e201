"""Data model, interchange formats, label derivation, and synthetic fixtures.

Two things cross process boundaries here and are therefore pinned down to
the byte: the ``EMBMAT01`` matrix format (label embeddings and per-sample
feature matrices) and the JSON-Lines dataset manifest. Everything else is
an in-memory model validated on construction; no partially-valid dataset
ever escapes the loader.

EMBMAT01 layout: bytes 0-7 ASCII ``EMBMAT01``, bytes 8-11 u32 LE row
count, bytes 12-15 u32 LE column count, then rows*cols float32 LE values
in row-major order. Row names live in a UTF-8 JSON sidecar at
``<path>.json`` as ``{"names": [...]}``. Values are float32 on disk and
promoted to float64 in memory.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, FormatError, ValidationError

log = logging.getLogger(__name__)

EMBMAT_MAGIC = b"EMBMAT01"
_HEADER = struct.Struct("<8sII")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N x m float matrix with one unique name per row."""

    data: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64, order="C")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "names", tuple(self.names))
        if data.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-dim, got {data.shape}")
        if len(self.names) != data.shape[0]:
            raise ValidationError(
                f"{len(self.names)} names for {data.shape[0]} rows"
            )
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise ValidationError(f"duplicate row names: {dupes}")
        if data.size and not np.all(np.isfinite(data)):
            raise ValidationError("embedding matrix contains non-finite values")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None


@dataclass(frozen=True)
class LabelSpace:
    """The label vocabulary of one dataset plus its embeddings."""

    embedding: EmbeddingMatrix
    source: str = ""

    def __post_init__(self):
        if self.embedding.rows < 1:
            raise ValidationError("label space needs at least one label")

    @property
    def names(self) -> tuple[str, ...]:
        return self.embedding.names

    @property
    def size(self) -> int:
        return self.embedding.rows

    @property
    def dim(self) -> int:
        return self.embedding.cols


@dataclass(frozen=True)
class Sample:
    """One music sample: T x d_in segment features plus its true labels."""

    id: str
    features: np.ndarray
    label_indices: tuple[int, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64, order="C")
        object.__setattr__(self, "features", feats)
        object.__setattr__(
            self, "label_indices", tuple(sorted(set(int(i) for i in self.label_indices)))
        )
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValidationError(
                f"sample {self.id!r} needs a T x d_in feature matrix with T >= 1, "
                f"got shape {feats.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"sample {self.id!r} has non-finite features")
        if not self.label_indices:
            raise ValidationError(f"sample {self.id!r} has no labels")

    @property
    def segments(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Dataset:
    name: str
    samples: tuple[Sample, ...]
    label_space: LabelSpace
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {self.split!r}")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate sample ids: {dupes}")
        n = self.label_space.size
        dims = set()
        for s in self.samples:
            if any(i >= n for i in s.label_indices):
                raise ValidationError(
                    f"sample {s.id!r} references label index outside the "
                    f"{n}-label space"
                )
            dims.add(s.feature_dim)
        if len(dims) > 1:
            raise ValidationError(
                f"dataset {self.name!r} mixes feature dims {sorted(dims)}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def feature_dim(self) -> int:
        if not self.samples:
            raise ValidationError(f"dataset {self.name!r} is empty")
        return self.samples[0].feature_dim


@dataclass(frozen=True)
class RatingsTable:
    """Per-sample, per-label aggregated ratings on a declared scale."""

    sample_ids: tuple[str, ...]
    label_names: tuple[str, ...]
    ratings: np.ndarray
    scale: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        r = np.asarray(self.ratings, dtype=np.float64, order="C")
        object.__setattr__(self, "ratings", r)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if r.ndim != 2:
            raise ValidationError(f"ratings must be 2-dim, got {r.shape}")
        if r.shape != (len(self.sample_ids), len(self.label_names)):
            raise ValidationError(
                f"ratings shape {r.shape} does not match {len(self.sample_ids)} "
                f"samples x {len(self.label_names)} labels"
            )
        lo, hi = self.scale
        if r.size and (r.min() < lo or r.max() > hi):
            raise ValidationError(
                f"ratings outside declared scale [{lo}, {hi}]: "
                f"range is [{r.min()}, {r.max()}]"
            )


# ---------------------------------------------------------------------------
# EMBMAT01 read / write
# ---------------------------------------------------------------------------


def write_embedding_matrix(m: EmbeddingMatrix, path: str | Path) -> None:
    """Write `m` as EMBMAT01 plus its names sidecar at `<path>.json`."""
    path = Path(path)
    if m.data.size and not np.all(np.isfinite(m.data)):
        raise ValidationError("refusing to write non-finite values")
    payload = m.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBMAT_MAGIC, m.rows, m.cols))
        fh.write(payload)
    sidecar = {"names": list(m.names)}
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, ensure_ascii=False)


def read_embedding_matrix(path: str | Path) -> EmbeddingMatrix:
    """Read an EMBMAT01 file and its names sidecar; promote to float64."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: shorter than the {_HEADER.size}-byte header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != EMBMAT_MAGIC:
        raise FormatError(
            f"{path}: bad magic {magic!r}, expected {EMBMAT_MAGIC.decode()!r}"
        )
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"expected {expected - _HEADER.size} for {rows}x{cols} float32"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    sidecar_path = Path(str(path) + ".json")
    with open(sidecar_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    names = sidecar.get("names")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise FormatError(f"{sidecar_path}: sidecar must hold a list of name strings")
    if len(names) != rows:
        raise ValidationError(
            f"{sidecar_path}: {len(names)} names for {rows} rows"
        )
    return EmbeddingMatrix(data=data.astype(np.float64), names=tuple(names))


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a JSON-Lines dataset manifest.

    The first line is a header ``{"label_space": path, "name": ...,
    "split": "train"|"test"}``; every following line is a sample
    ``{"id": ..., "features": path, "labels": [...]}``. Paths are
    resolved relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    with open(manifest_path, encoding="utf-8") as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise FormatError(f"{manifest_path}: empty manifest (missing header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: header is not valid JSON: {e}") from e
    for key in ("label_space", "name", "split"):
        if key not in header:
            raise FormatError(f"{manifest_path}: header missing {key!r}")

    label_space = LabelSpace(
        embedding=read_embedding_matrix(base / header["label_space"]),
        source=header["name"],
    )
    name_to_idx = {n: i for i, n in enumerate(label_space.names)}

    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{manifest_path}:{lineno}: not valid JSON: {e}") from e
        for key in ("id", "features", "labels"):
            if key not in rec:
                raise FormatError(f"{manifest_path}:{lineno}: sample missing {key!r}")
        indices = []
        for label in rec["labels"]:
            if label not in name_to_idx:
                raise ValidationError(
                    f"{manifest_path}:{lineno}: sample {rec['id']!r} uses label "
                    f"{label!r} which is not in the label space of "
                    f"{header['name']!r}"
                )
            indices.append(name_to_idx[label])
        feats = read_embedding_matrix(base / rec["features"])
        samples.append(
            Sample(id=rec["id"], features=feats.data, label_indices=tuple(indices))
        )

    if not samples:
        log.warning("manifest %s declares zero samples", manifest_path)
    return Dataset(
        name=header["name"],
        samples=tuple(samples),
        label_space=label_space,
        split=header["split"],
    )


def write_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write a dataset as manifest + EMBMAT01 files; returns the manifest path.

    Layout under `out_dir`: ``<name>_labels.emb`` for the label space,
    ``features/<name>/<split>/<id>.emb`` per sample, and the manifest at
    ``<name>_<split>.jsonl``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels_rel = f"{dataset.name}_labels.emb"
    write_embedding_matrix(dataset.label_space.embedding, out_dir / labels_rel)

    feat_dir = out_dir / "features" / dataset.name / dataset.split
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / f"{dataset.name}_{dataset.split}.jsonl"
    names = dataset.label_space.names
    with open(manifest_path, "w", encoding="utf-8") as fh:
        header = {"label_space": labels_rel, "name": dataset.name, "split": dataset.split}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in dataset.samples:
            rel = f"features/{dataset.name}/{dataset.split}/{s.id}.emb"
            seg_names = tuple(f"seg{i:04d}" for i in range(s.segments))
            write_embedding_matrix(
                EmbeddingMatrix(data=s.features, names=seg_names), out_dir / rel
            )
            rec = {
                "id": s.id,
                "features": rel,
                "labels": [names[i] for i in s.label_indices],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


def merge_label_spaces(
    spaces: Sequence[LabelSpace],
) -> tuple[EmbeddingMatrix, list[tuple[int, ...]]]:
    """Union of several label spaces, deduplicated by name.

    Returns the union matrix plus, per input space, the map from local
    label index to union row. A name appearing in two spaces must carry
    the same embedding in both; anything else means the spaces came from
    different encoders and cannot share one geometry.
    """
    if not spaces:
        raise ArgumentError("need at least one label space")
    dims = {s.dim for s in spaces}
    if len(dims) != 1:
        raise ValidationError(f"label spaces mix embedding dims {sorted(dims)}")
    names: list[str] = []
    rows: list[np.ndarray] = []
    index: dict[str, int] = {}
    maps: list[tuple[int, ...]] = []
    for space in spaces:
        local = []
        for i, name in enumerate(space.names):
            row = space.embedding.data[i]
            if name in index:
                if not np.array_equal(rows[index[name]], row):
                    raise ValidationError(
                        f"label {name!r} has different embeddings in different spaces"
                    )
            else:
                index[name] = len(names)
                names.append(name)
                rows.append(row)
            local.append(index[name])
        maps.append(tuple(local))
    union = EmbeddingMatrix(data=np.array(rows), names=tuple(names))
    return union, maps


# ---------------------------------------------------------------------------
# label derivation from aggregated ratings
# ---------------------------------------------------------------------------


def derive_labels_mean_threshold(
    table: RatingsTable, threshold: float
) -> list[tuple[int, ...]]:
    """Labels whose mean rating strictly exceeds `threshold`, per sample.

    A sample where nothing passes gets its single highest-rated label
    (ties go to the lowest index), so the result is never empty.
    """
    lo, hi = table.scale
    if not (lo <= threshold <= hi):
        raise ArgumentError(
            f"threshold {threshold} outside rating scale [{lo}, {hi}]"
        )
    if table.ratings.shape[1] == 0:
        raise ValidationError("ratings table has no labels")
    out = []
    for row in table.ratings:
        picked = np.flatnonzero(row > threshold)
        if picked.size == 0:
            picked = np.array([int(np.argmax(row))])
        out.append(tuple(int(i) for i in picked))
    return out


def derive_labels_top_k(table: RatingsTable, k: int) -> list[tuple[int, ...]]:
    """The k highest-rated label indices per sample, ties to lowest index."""
    n = table.ratings.shape[1]
    if k == 0:
        raise ArgumentError("k must be at least 1")
    if k > n:
        raise ArgumentError(f"k={k} exceeds the {n}-label space")
    out = []
    for row in table.ratings:
        order = np.argsort(-row, kind="stable")
        out.append(tuple(sorted(int(i) for i in order[:k])))
    return out


def read_ratings_csv(
    path: str | Path, scale: tuple[float, float] | None = None
) -> RatingsTable:
    """Read a ratings CSV: first column sample id, header row label names."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = rows[0]
    if len(header) < 2:
        raise FormatError(f"{path}: need an id column plus at least one label column")
    label_names = tuple(header[1:])
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(
                f"{path}:{lineno}: {len(row)} fields, expected {len(header)}"
            )
        ids.append(row[0])
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: non-numeric rating: {e}") from e
    ratings = np.asarray(values, dtype=np.float64).reshape(len(ids), len(label_names))
    if scale is None:
        scale = (float(ratings.min()), float(ratings.max())) if ids else (0.0, 0.0)
    return RatingsTable(
        sample_ids=tuple(ids), label_names=label_names, ratings=ratings, scale=scale
    )


# ---------------------------------------------------------------------------
# synthetic scenario generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic multi-dataset scenario.

    `concepts` latent unit directions are drawn in the label space; each
    dataset gets its own disjoint set of synonym labels per concept (the
    concept direction plus a renormalized perturbation of magnitude
    `label_noise`). Sample features are a fixed linear map of the
    sample's concept direction plus per-segment Gaussian noise.
    """

    concepts: int
    labels_per_concept: int = 4
    datasets: int = 3
    samples_per_dataset: int | tuple[int, ...] = 200
    test_samples_per_dataset: int | tuple[int, ...] = 50
    segments: int = 4
    label_dim: int = 16
    feature_dim: int = 32
    label_noise: float = 0.3
    feature_noise: float = 0.1

    def train_counts(self) -> tuple[int, ...]:
        return _per_dataset(self.samples_per_dataset, self.datasets)

    def test_counts(self) -> tuple[int, ...]:
        return _per_dataset(self.test_samples_per_dataset, self.datasets)


def _per_dataset(value, n: int) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ArgumentError(f"need {n} per-dataset counts, got {len(value)}")
    return value


@dataclass(frozen=True)
class SynthTruth:
    """Ground truth behind a generated scenario."""

    concept_dirs: np.ndarray  # concepts x label_dim, unit rows
    mixing: np.ndarray  # feature_dim x label_dim
    label_concepts: tuple[tuple[int, ...], ...]  # per dataset: label -> concept
    sample_concepts: dict  # (name, split) -> tuple of per-sample concepts


def generate_synthetic(
    spec: SynthSpec, seed: int
) -> tuple[list[Dataset], SynthTruth]:
    """Generate train and test datasets for a synthetic scenario.

    Returns 2*spec.datasets Dataset objects, ordered train then test per
    source, all deterministic under (spec, seed). Dataset names are
    ``synth0 .. synth{n-1}``; label names are disjoint across datasets.
    """
    if spec.concepts < 2:
        raise ArgumentError("need at least 2 concepts")
    rng = np.random.default_rng(seed)

    dirs = rng.standard_normal((spec.concepts, spec.label_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mixing = rng.standard_normal((spec.feature_dim, spec.label_dim))

    datasets: list[Dataset] = []
    label_concepts: list[tuple[int, ...]] = []
    sample_concepts: dict = {}
    train_counts = spec.train_counts()
    test_counts = spec.test_counts()

    for d in range(spec.datasets):
        name = f"synth{d}"
        vectors, names, concepts_of = [], [], []
        for c in range(spec.concepts):
            for j in range(spec.labels_per_concept):
                vec = dirs[c]
                if spec.label_noise > 0:
                    g = rng.standard_normal(spec.label_dim)
                    vec = vec + spec.label_noise * g / np.linalg.norm(g)
                    vec = vec / np.linalg.norm(vec)
                vectors.append(vec)
                names.append(f"{name}_c{c}_l{j}")
                concepts_of.append(c)
        label_concepts.append(tuple(concepts_of))
        space = LabelSpace(
            embedding=EmbeddingMatrix(data=np.array(vectors), names=tuple(names)),
            source=name,
        )
        concept_labels = [
            tuple(i for i, cc in enumerate(concepts_of) if cc == c)
            for c in range(spec.concepts)
        ]

        for split, count in (("train", train_counts[d]), ("test", test_counts[d])):
            samples, concepts = [], []
            for i in range(count):
                c = int(rng.integers(spec.concepts))
                concepts.append(c)
                base = mixing @ dirs[c]
                feats = base + spec.feature_noise * rng.standard_normal(
                    (spec.segments, spec.feature_dim)
                )
                samples.append(
                    Sample(
                        id=f"{name}-{split}-{i:04d}",
                        features=feats,
                        label_indices=concept_labels[c],
                    )
                )
            sample_concepts[(name, split)] = tuple(concepts)
            datasets.append(
                Dataset(name=name, samples=tuple(samples), label_space=space, split=split)
            )

    truth = SynthTruth(
        concept_dirs=dirs,
        mixing=mixing,
        label_concepts=tuple(label_concepts),
        sample_concepts=sample_concepts,
    )
    return datasets, truth
