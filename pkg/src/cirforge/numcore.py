"""Dense float64 tensors with reverse-mode autodiff, AdamW, checkpoint i/o.

Everything trains in 64-bit: at desk scale precision is cheap and it keeps
central finite-difference checks tight.  numpy supplies array storage and
kernels; the graph, gradients and optimizer live here.  Forward values are
bit-reproducible for fixed inputs (numpy's reductions are deterministic on
a given build, and no op introduces data-dependent ordering).

Checkpoint container (all little-endian):

    bytes 0-7  magic ASCII "CIRCKPT1"
    uint64 entry count, then per entry:
        uint64 name length, UTF-8 name, uint64 rank,
        rank x uint64 dims, row-major float64 data
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

CHECKPOINT_MAGIC = b"CIRCKPT1"
LAYER_NORM_EPS = 1e-5


class Tensor:
    """A node in the computation graph; wraps a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp) -> Tensor:
    track = any(p.requires_grad or p._parents for p in parents)
    if not track:
        return Tensor(data)
    out = Tensor(data)
    out._parents = tuple(parents)
    out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_2d(a: Tensor, op: str):
    if a.data.ndim != 2:
        raise ValidationError(f"{op}: expected 2-D tensor, got shape {a.shape}")


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                         _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                         _unbroadcast(g * a.data, b.data.shape)))


def mul_scalar(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValidationError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _node(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    _check_2d(a, "transpose")
    return _node(a.data.T, (a,), lambda g: (g.T,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def linear(x, w, b) -> Tensor:
    """x @ w + b with bias broadcast over leading rows."""
    return add(matmul(x, w), b)


# ------------------------------------------------------------ shape surgery


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValidationError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        grads, offset = [], 0
        for size in sizes:
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            grads.append(g[tuple(index)])
            offset += size
        return tuple(grads)

    return _node(out, tensors, vjp)


def rows(a, r0: int, r1: int) -> Tensor:
    """Row span a[r0:r1, :]."""
    a = _as_tensor(a)
    _check_2d(a, "rows")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[r0:r1, :] = g
        return (full,)

    return _node(a.data[r0:r1, :], (a,), vjp)


def cols(a, c0: int, c1: int) -> Tensor:
    """Column span a[:, c0:c1]."""
    a = _as_tensor(a)
    _check_2d(a, "cols")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, c0:c1] = g
        return (full,)

    return _node(a.data[:, c0:c1], (a,), vjp)


def diagonal(a) -> Tensor:
    a = _as_tensor(a)
    _check_2d(a, "diagonal")
    n = min(a.data.shape)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[np.arange(n), np.arange(n)] = g
        return (full,)

    return _node(np.diagonal(a.data).copy(), (a,), vjp)


def embedding_lookup(table, indices) -> Tensor:
    """Rows of a (V, d) table selected by an int index array."""
    table = _as_tensor(table)
    _check_2d(table, "embedding_lookup")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValidationError(f"embedding_lookup: indices must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValidationError("embedding_lookup: index out of range")

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(table.data[idx], (table,), vjp)


# ------------------------------------------------------------- reductions


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(out, (a,), vjp)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return mul_scalar(sum_all(a), 1.0 / n)


# ------------------------------------------------------ normalization & co


def softmax(a) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _node(y, (a,), vjp)


def log_softmax(a) -> Tensor:
    """log softmax over the last axis via the log-sum-exp max trick."""
    a = _as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), vjp)


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (a.data - mu) / sigma

    def vjp(g):
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * xhat).mean(axis=-1, keepdims=True)
        return ((g - m1 - xhat * m2) / sigma,)

    return _node(xhat, (a,), vjp)


def l2_normalize(a) -> Tensor:
    """Scale each row (last axis) to unit L2 norm."""
    a = _as_tensor(a)
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm == 0.0):
        raise ValidationError("l2_normalize: zero-norm row")
    y = a.data / norm

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / norm,)

    return _node(y, (a,), vjp)


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine between two equally shaped 2-D tensors -> (n,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValidationError(f"cosine_similarity: shapes differ, {a.shape} vs {b.shape}")
    return sum_axis(mul(l2_normalize(a), l2_normalize(b)), axis=-1)


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse accumulation from a scalar loss; fills .grad on the graph."""
    if loss.data.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        for parent, grad in zip(node._parents, node._vjp(node.grad)):
            if grad is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(grad, dtype=np.float64, copy=True)
            else:
                parent.grad += grad


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients per named parameter; unreachable parameters get zeros."""
    for p in params.values():
        p.grad = None
    backward(loss)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


# ------------------------------------------------------------------- AdamW


@dataclass
class AdamWState:
    """Per-parameter moments plus group learning rates and decay settings."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    base_lr: dict[str, float]
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: dict[str, Tensor], trainable: set[str],
               lr_of, weight_decay: float) -> "AdamWState":
        names = [n for n in params if n in trainable]
        return cls(
            m={n: np.zeros_like(params[n].data) for n in names},
            v={n: np.zeros_like(params[n].data) for n in names},
            step=0,
            base_lr={n: float(lr_of(n)) for n in names},
            weight_decay=float(weight_decay),
        )


def cosine_schedule(position: float) -> float:
    """Decay multiplier 0.5*(1+cos(pi*position)); 1 at start, 0 at end."""
    if not 0.0 <= position <= 1.0:
        raise ValidationError(f"schedule position must be in [0, 1], got {position}")
    return 0.5 * (1.0 + math.cos(math.pi * position))


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: AdamWState, schedule_position: float) -> None:
    """One decoupled-weight-decay Adam update over the state's parameters."""
    decay = cosine_schedule(schedule_position)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name in state.m:
        p = params[name]
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValidationError(f"{name}: grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        lr = state.base_lr[name] * decay
        p.data -= lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * p.data)


# ------------------------------------------------------------- checkpoints


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays in sorted-name order for canonical bytes."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            data = np.asarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(data.astype("<f8").tobytes(order="C"))


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {CHECKPOINT_MAGIC!r}")
    offset = 8

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise FormatError(f"{path}: truncated container")
        out = struct.unpack_from(fmt, blob, offset)
        offset += size
        return out

    (count,) = take("<Q")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<Q")
        if offset + name_len > len(blob):
            raise FormatError(f"{path}: truncated name")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<Q")
        shape = tuple(take("<Q")[0] for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 8 * size
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated data for {name!r}")
        data = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).copy()
        offset += nbytes
        tensors[name] = data.reshape(shape)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors
