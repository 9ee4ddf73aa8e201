"""The audio-to-label-space projector network and its checkpoint format.

Per-segment features (T x d_in rows, one per audio segment) are linearly
projected to d_model, passed through a stack of post-norm self-attention
blocks (multi-head attention, residual, layer norm, ReLU feedforward,
residual, layer norm), mean-pooled over the T positions, and projected
to the label-embedding dimension m. There is no positional encoding:
segment order carries no signal here, which makes the whole network
permutation-invariant over segments.

Checkpoints use the ``EMOCKPT1`` container: 8 magic bytes, a u32 LE
header length, a UTF-8 JSON header ``{"config": ..., "metadata": ...,
"tensors": [{"name", "shape", "offset"}, ...]}`` with tensors listed in
canonical parameter order, then the concatenated float32 LE tensor
blobs. Weights are stored float32 and promoted to float64 on load.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from . import diffmath as dm
from .diffmath import Tensor
from .errors import ArgumentError, DimensionError, FormatError, NumericError

CKPT_MAGIC = b"EMOCKPT1"


@dataclass(frozen=True)
class ProjectorConfig:
    d_in: int = 3072  # 4 concatenated encoder layers x 768
    d_model: int = 256
    blocks: int = 2
    heads: int = 4
    ffn_mult: int = 4
    out_dim: int = 384
    ln_eps: float = 1e-5
    dropout: float = 0.0  # applied to each sublayer output during training

    def __post_init__(self):
        for name in ("d_in", "d_model", "blocks", "heads", "ffn_mult", "out_dim"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.heads != 0:
            raise ArgumentError(
                f"d_model={self.d_model} not divisible by heads={self.heads}"
            )
        if self.ln_eps <= 0:
            raise ArgumentError(f"ln_eps must be positive, got {self.ln_eps}")
        if not (0.0 <= self.dropout < 1.0):
            raise ArgumentError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def tensor_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Canonical (name, shape) list; checkpoint order is exactly this."""
        d, m = self.d_model, self.out_dim
        shapes: list[tuple[str, tuple[int, ...]]] = [
            ("in.w", (self.d_in, d)),
            ("in.b", (d,)),
        ]
        for i in range(self.blocks):
            p = f"block{i}"
            for proj in ("q", "k", "v", "o"):
                shapes.append((f"{p}.attn.{proj}.w", (d, d)))
                shapes.append((f"{p}.attn.{proj}.b", (d,)))
            shapes.append((f"{p}.ln1.g", (d,)))
            shapes.append((f"{p}.ln1.b", (d,)))
            shapes.append((f"{p}.ffn.w1", (d, self.ffn_mult * d)))
            shapes.append((f"{p}.ffn.b1", (self.ffn_mult * d,)))
            shapes.append((f"{p}.ffn.w2", (self.ffn_mult * d, d)))
            shapes.append((f"{p}.ffn.b2", (d,)))
            shapes.append((f"{p}.ln2.g", (d,)))
            shapes.append((f"{p}.ln2.b", (d,)))
        shapes.append(("out.w", (d, m)))
        shapes.append(("out.b", (m,)))
        return shapes


@dataclass
class ProjectorParams:
    """All trainable tensors of one projector, in canonical order."""

    config: ProjectorConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def tensor_list(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ProjectorParams":
        out = ProjectorParams(config=self.config)
        for name, t in self.tensors.items():
            out.tensors[name] = Tensor(t.data.copy(), requires_grad=True)
        return out

    def validate(self) -> None:
        expected = self.config.tensor_shapes()
        names = [n for n, _ in expected]
        if list(self.tensors.keys()) != names:
            raise ArgumentError("parameter tensors out of canonical order")
        for name, shape in expected:
            t = self.tensors[name]
            if t.data.shape != shape:
                raise DimensionError(
                    f"tensor {name} has shape {t.data.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"tensor {name} contains non-finite values")


def init_projector(cfg: ProjectorConfig, seed: int) -> ProjectorParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    params = ProjectorParams(config=cfg)
    for name, shape in cfg.tensor_shapes():
        if len(shape) == 2:  # weight matrix, fan_in is the input dim
            bound = 1.0 / np.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".g"):
            data = np.ones(shape)
        else:  # biases
            data = np.zeros(shape)
        params.tensors[name] = Tensor(data, requires_grad=True)
    return params


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return dm.add(dm.matmul(x, w), b)


def _attention(a: Tensor, p: dict[str, Tensor], prefix: str, cfg: ProjectorConfig) -> Tensor:
    t = a.data.shape[-2]
    q = _linear(a, p[f"{prefix}.attn.q.w"], p[f"{prefix}.attn.q.b"])
    k = _linear(a, p[f"{prefix}.attn.k.w"], p[f"{prefix}.attn.k.b"])
    v = _linear(a, p[f"{prefix}.attn.v.w"], p[f"{prefix}.attn.v.b"])

    def split_heads(x: Tensor) -> Tensor:
        lead = x.data.shape[:-2]
        x = dm.reshape(x, lead + (t, cfg.heads, cfg.head_dim))
        return dm.swapaxes(x, -3, -2)  # ... x heads x T x head_dim

    mixed = dm.softmax_attention(split_heads(q), split_heads(k), split_heads(v))
    lead = a.data.shape[:-2]
    mixed = dm.reshape(dm.swapaxes(mixed, -3, -2), lead + (t, cfg.d_model))
    return _linear(mixed, p[f"{prefix}.attn.o.w"], p[f"{prefix}.attn.o.b"])


def _maybe_dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout as multiplication by a constant mask tensor."""
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return dm.mul(x, Tensor(mask))


def forward(
    params: ProjectorParams, features, with_grad: bool = True, dropout_rng=None
) -> Tensor:
    """Project a T x d_in feature matrix (or a B x T x d_in batch) into R^m.

    Returns a tensor of shape (m,) for a single sample or (B, m) for a
    batch. With `with_grad=False` the graph is not recorded, which makes
    evaluation loops cheaper; parameters are never mutated either way.
    Dropout (when configured) fires only while a `dropout_rng` is
    supplied, so inference stays deterministic without mode flags.
    """
    feats = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    single = feats.ndim == 2
    if single:
        feats = feats[None, :, :]
    if feats.ndim != 3:
        raise DimensionError(f"features must be T x d_in or B x T x d_in, got {feats.shape}")
    cfg = params.config
    if feats.shape[-1] != cfg.d_in:
        raise DimensionError(
            f"features have {feats.shape[-1]} columns, projector expects {cfg.d_in}"
        )
    if feats.shape[-2] < 1:
        raise DimensionError("need at least one segment")
    if not np.all(np.isfinite(feats)):
        raise NumericError("non-finite values in projector input")

    if with_grad:
        p = params.tensors
    else:
        p = {name: Tensor(t.data) for name, t in params.tensors.items()}

    x = Tensor(feats)
    a = _linear(x, p["in.w"], p["in.b"])
    for i in range(cfg.blocks):
        prefix = f"block{i}"
        attn = _maybe_dropout(_attention(a, p, prefix, cfg), cfg.dropout, dropout_rng)
        a = dm.layer_norm(dm.add(attn, a), p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"], cfg.ln_eps)
        h = dm.relu(_linear(a, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"]))
        h = _maybe_dropout(
            _linear(h, p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"]),
            cfg.dropout, dropout_rng,
        )
        a = dm.layer_norm(dm.add(h, a), p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"], cfg.ln_eps)
    pooled = dm.mean_axis(a, -2)
    out = _linear(pooled, p["out.w"], p["out.b"])
    if single:
        out = dm.reshape(out, (cfg.out_dim,))
    return out


def project(params: ProjectorParams, features) -> np.ndarray:
    """Inference-only forward pass returning a plain array."""
    return forward(params, features, with_grad=False).data


def batched_forward(
    params: ProjectorParams, feats_list, with_grad: bool = True, dropout_rng=None
) -> Tensor:
    """Forward a list of T_i x d_in matrices as one (len, m) tensor.

    Samples are grouped by segment count so each group runs as a single
    batched pass; the result rows are restored to input order.
    """
    if not feats_list:
        raise DimensionError("batched_forward needs at least one sample")
    groups: dict[int, list[int]] = {}
    for i, f in enumerate(feats_list):
        groups.setdefault(f.shape[0], []).append(i)
    parts, order = [], []
    for t in sorted(groups):
        idxs = groups[t]
        stacked = np.stack([np.asarray(feats_list[i], dtype=np.float64) for i in idxs])
        parts.append(forward(params, stacked, with_grad, dropout_rng))
        order.extend(idxs)
    out = dm.concat_rows(parts) if len(parts) > 1 else parts[0]
    if order != list(range(len(feats_list))):
        out = dm.take_rows(out, np.argsort(np.asarray(order), kind="stable"))
    return out


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------


def save_checkpoint(params: ProjectorParams, metadata: dict, path: str | Path) -> None:
    """Write an EMOCKPT1 checkpoint (float32 weights, JSON header)."""
    params.validate()
    entries = []
    blobs = []
    offset = 0
    for name, t in params.items():
        blob = t.data.astype("<f4").tobytes(order="C")
        entries.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": asdict(params.config),
        "metadata": metadata,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[ProjectorParams, dict]:
    """Read an EMOCKPT1 checkpoint; returns (params, metadata)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: shorter than the fixed 12-byte prefix")
    if raw[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {CKPT_MAGIC.decode()!r}")
    (header_len,) = struct.unpack_from("<I", raw, 8)
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid JSON: {e}") from e
    for key in ("config", "metadata", "tensors"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    try:
        cfg = ProjectorConfig(**header["config"])
    except (TypeError, ArgumentError) as e:
        raise FormatError(f"{path}: bad config in header: {e}") from e

    expected = cfg.tensor_shapes()
    entries = header["tensors"]
    if [(e["name"], tuple(e["shape"])) for e in entries] != expected:
        raise FormatError(f"{path}: tensor table does not match the declared config")
    blob = raw[12 + header_len :]
    total = sum(int(np.prod(shape)) * 4 for _, shape in expected)
    if len(blob) != total:
        raise FormatError(
            f"{path}: weight blob is {len(blob)} bytes, config needs {total}"
        )
    params = ProjectorParams(config=cfg)
    for entry, (name, shape) in zip(entries, expected):
        off = entry["offset"]
        count = int(np.prod(shape))
        if off + 4 * count > len(blob):
            raise FormatError(f"{path}: tensor {name} overruns the blob")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        params.tensors[name] = Tensor(data.astype(np.float64), requires_grad=True)
    return params, header["metadata"]
