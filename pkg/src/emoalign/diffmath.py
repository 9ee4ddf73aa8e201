"""Dense float64 tensor kernels with reverse-mode derivatives.

This is a deliberately small autodiff core: just the operations the
projector network and its training objectives need, nothing more. Every
operation records a backward closure on the tensor it produces; calling
``backward()`` on a scalar result replays those closures in reverse
creation order. Creation order is a valid topological order (an input
always exists before the node that consumes it), so the replay is fixed
and gradients are bit-identical across runs for identical inputs.

All data is float64 and row-major. Operations accept leading batch
dimensions wherever that is meaningful (matmul, layer_norm, softmax),
following numpy broadcasting rules; gradients of broadcast operands are
summed back to the operand's shape.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, DegenerateInputError, DimensionError, NumericError

_seq_counter = itertools.count()


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    `requires_grad` marks leaves that want gradients; interior nodes
    inherit it from their inputs. `grad` is allocated lazily (zeros) the
    first time a gradient is accumulated into the tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_seq_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.ndim != 0:
            raise ArgumentError(
                f"backward() needs a scalar tensor, got shape {self.data.shape}"
            )
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        # Reverse creation order is a reverse topological order.
        nodes.sort(key=lambda t: t._seq, reverse=True)
        _accumulate(self, np.ones((), dtype=np.float64))
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=np.float64)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _make(data, (a,), backward)


def add_const(a: Tensor, c: float) -> Tensor:
    data = a.data + float(c)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g)

    return _make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # subgradient 0 exactly at the hinge point
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    data = np.swapaxes(a.data, i, j)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.swapaxes(g, i, j))

    return _make(np.ascontiguousarray(data), (a,), backward)


def take_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Gather rows of `a` along axis 0; rows may repeat."""
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            ga = np.zeros(a.data.shape, dtype=np.float64)
            np.add.at(ga, idx, g)
            _accumulate(a, ga)

    return _make(data, (a,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors along axis 0; trailing dimensions must agree."""
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    trailing = {p.data.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise DimensionError(f"concat_rows trailing shapes disagree: {sorted(trailing)}")
    data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accumulate(p, g[lo:hi])

    return _make(data, tuple(parts), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g, a.data.shape).astype(np.float64))

    return _make(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise DimensionError("mean over an empty tensor")
    data = np.asarray(a.data.mean())

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.full(a.data.shape, float(g) / n))

    return _make(data, (a,), backward)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    if n == 0:
        raise DimensionError("mean over an empty axis")
    data = a.data.mean(axis=axis)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics on the last two axes.

    Backward accumulates dL/da = g @ b^T and dL/db = a^T @ g, with
    broadcast batch axes summed back onto each operand.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-dim operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def softmax_last(a: Tensor) -> Tensor:
    """Softmax along the last axis (numerically stabilized)."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(a, s * (g - inner))

    return _make(s, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Variance is the biased estimator (divide by D). `gain` and `bias`
    must be 1-dim of length D; the gradient of both is summed over all
    leading axes.
    """
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm needs a non-empty last axis")
    if eps <= 0:
        raise ArgumentError(f"layer_norm eps must be positive, got {eps}")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({d},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gain.data * xhat + bias.data

    def backward(g):
        if gain.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * xhat).sum(axis=axes))
        if bias.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(bias, g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gain.data
            # d/dx of (x - mu) * inv with mu, var functions of x
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx_hat - m1 - xhat * m2))

    return _make(data, (x, gain, bias), backward)


def softmax_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(q k^T / sqrt(d_h)) v.

    Operates on the last two axes (positions x head dim), so stacked
    head/batch axes in front are fine. Attention rows sum to one.
    """
    if q.data.ndim < 2 or k.data.ndim < 2 or v.data.ndim < 2:
        raise DimensionError("softmax_attention needs >=2-dim inputs")
    t, dh = q.data.shape[-2], q.data.shape[-1]
    if t == 0:
        raise DimensionError("softmax_attention needs at least one position")
    if k.data.shape != q.data.shape or v.data.shape != q.data.shape:
        raise DimensionError(
            f"softmax_attention shapes disagree: {q.data.shape}, "
            f"{k.data.shape}, {v.data.shape}"
        )
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
    return matmul(softmax_last(scores), v)


# ---------------------------------------------------------------------------
# cosine similarity
# ---------------------------------------------------------------------------


def rowwise_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of corresponding rows of two (B, m) tensors."""
    if a.data.ndim != 2 or a.data.shape != b.data.shape:
        raise DimensionError(
            f"rowwise_cosine needs equal 2-dim shapes, got {a.data.shape} "
            f"and {b.data.shape}"
        )
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    dot = (a.data * b.data).sum(axis=1)
    cos = dot / (na * nb)

    def backward(g):
        gcol = g[:, None]
        if a.requires_grad:
            ga = gcol * (b.data / (na * nb)[:, None] - (cos / (na * na))[:, None] * a.data)
            _accumulate(a, ga)
        if b.requires_grad:
            gb = gcol * (a.data / (na * nb)[:, None] - (cos / (nb * nb))[:, None] * b.data)
            _accumulate(b, gb)

    return _make(cos, (a, b), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1-dim vectors, in [-1, 1].

    Refuses zero-norm inputs: cosine is undefined there and guessing a
    value would silently corrupt every objective built on top.
    """
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise DimensionError(
            f"cosine_similarity needs equal-length vectors, got {a.data.shape} "
            f"and {b.data.shape}"
        )
    a2 = reshape(a, (1, a.data.shape[0]))
    b2 = reshape(b, (1, b.data.shape[0]))
    return reshape(rowwise_cosine(a2, b2), ())


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Compare analytic gradients of `f` against central finite differences.

    `f` must deterministically rebuild the scalar graph from the current
    contents of `params` on every call. Returns the worst element-wise
    relative error, with denominators floored at 1e-8.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ArgumentError(f"grad_check step h must be in [1e-7, 1e-3], got {h}")

    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.data):
        raise NumericError("grad_check objective is not finite")
    out.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros(p.data.shape) for p in params
    ]

    def eval_f() -> float:
        val = float(f().data)
        if not np.isfinite(val):
            raise NumericError("grad_check objective is not finite at a probe point")
        return val

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_f()
            flat[i] = orig - h
            f_minus = eval_f()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(fd), abs(an_flat[i]), 1e-8)
            worst = max(worst, abs(fd - an_flat[i]) / denom)
    return worst
