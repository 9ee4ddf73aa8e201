"""Writers for the interchange formats the main library consumes.

This package talks to the library exclusively through files, so the
formats are reimplemented here from their byte-level definitions rather
than imported: EMBMAT01 (8-byte magic, u32 LE rows, u32 LE cols, float32
LE row-major payload, names in a JSON sidecar at `<path>.json`) and the
JSON-Lines dataset manifest (header line with label_space/name/split,
then one id/features/labels object per sample).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

EMBMAT_MAGIC = b"EMBMAT01"
_HEADER = struct.Struct("<8sII")


class ExtractionError(Exception):
    """Unrecoverable problem while extracting features or labels."""


def write_embedding_file(
    data: np.ndarray, names: Sequence[str], path: str | Path
) -> None:
    """Write an EMBMAT01 file plus its names sidecar."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ExtractionError(f"need a 2-dim matrix, got shape {data.shape}")
    if len(names) != data.shape[0]:
        raise ExtractionError(f"{len(names)} names for {data.shape[0]} rows")
    if data.size and not np.all(np.isfinite(data)):
        raise ExtractionError("refusing to write non-finite values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBMAT_MAGIC, data.shape[0], data.shape[1]))
        fh.write(data.astype("<f4").tobytes(order="C"))
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump({"names": list(names)}, fh, ensure_ascii=False)


def write_manifest(
    path: str | Path,
    name: str,
    split: str,
    label_space_rel: str,
    samples: Sequence[Mapping],
) -> Path:
    """Write a dataset manifest; `samples` entries need id/features/labels."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        header = {"label_space": label_space_rel, "name": name, "split": split}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in samples:
            rec = {
                "id": s["id"],
                "features": s["features"],
                "labels": list(s["labels"]),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path
