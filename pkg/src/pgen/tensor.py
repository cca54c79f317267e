"""A small reverse-mode autodiff engine over numpy arrays.

Operations on tensors that require gradients are appended to the active
:class:`Tape`. :func:`backward` walks the tape in reverse, accumulating
gradients into leaf tensors, then clears it. Inside :func:`no_grad` nothing
is recorded.

Tensors are rank <= 3 with an explicit batch dimension. There is no general
broadcasting: the only mixed-shape addition is a vector added to every row.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NotScalar, ShapeMismatch, TargetOutOfRange

MAX_RANK = 3


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeMismatch(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self.enabled = True

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad():
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def _result(data: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = get_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.nodes.append(_Node(out, tuple(inputs), grad_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Gradients add onto whatever a leaf already holds, so callers zero them
    between independent updates. The tape is cleared afterwards.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = get_tape()
    try:
        if not loss.requires_grad:
            return
        if loss.is_leaf:
            _accumulate(loss, np.ones_like(loss.data))
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    _accumulate(inp, gi)
                else:
                    key = id(inp)
                    grads[key] = grads[key] + gi if key in grads else gi
    finally:
        tape.clear()


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum, or ``b`` (a vector) added to every row of ``a``."""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.shape[-1:] == b.shape:
        axes = tuple(range(a.data.ndim - 1))
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a constant (non-differentiable) array of the same shape."""
    c = np.asarray(c)
    if c.shape != a.shape:
        raise ShapeMismatch(f"constant shape {c.shape} does not match {a.shape}")
    return _result(a.data + c, (a,), lambda g: (g,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)
    if c.shape != a.shape:
        raise ShapeMismatch(f"constant shape {c.shape} does not match {a.shape}")
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Accepts ``[m,k]@[k,n]``, ``[B,m,k]@[k,n]`` (shared right operand) and
    ``[B,m,k]@[B,k,n]``.
    """
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"cannot matmul {a.shape} by {b.shape}")
    if b.data.ndim == 3 and (a.data.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeMismatch(f"batch dims differ: {a.shape} vs {b.shape}")
    if a.data.ndim == 2 and b.data.ndim == 3:
        raise ShapeMismatch(f"cannot matmul {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if ad.ndim == 3 and bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), grad)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeMismatch("transpose needs rank >= 2")
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """``[B, T, H*D]`` -> ``[B*H, T, D]``."""
    B, T, E = x.shape
    if E % n_heads:
        raise ShapeMismatch(f"width {E} not divisible by {n_heads} heads")
    D = E // n_heads
    out = x.data.reshape(B, T, n_heads, D).transpose(0, 2, 1, 3).reshape(B * n_heads, T, D)
    return _result(out, (x,), lambda g: (g.reshape(B, n_heads, T, D).transpose(0, 2, 1, 3).reshape(B, T, E),))


def merge_heads(x: Tensor, n_heads: int) -> Tensor:
    """``[B*H, T, D]`` -> ``[B, T, H*D]``."""
    BH, T, D = x.shape
    B = BH // n_heads
    out = x.data.reshape(B, n_heads, T, D).transpose(0, 2, 1, 3).reshape(B, T, n_heads * D)
    return _result(out, (x,), lambda g: (g.reshape(B, T, n_heads, D).transpose(0, 2, 1, 3).reshape(BH, T, D),))


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    n = a.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)

    def grad(g):
        ga, gb = np.split(g, [n], axis=axis)
        return ga, gb

    return _result(out, (a, b), grad)


def select_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the first axis."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def grad(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), grad)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result(x.data * pos, (x,), lambda g: (g * pos,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return mul_const(x, keep / (1.0 - p))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), grad)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def grad(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), grad)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeMismatch(f"gain/bias must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    axes = tuple(range(x.data.ndim - 1))

    def grad(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(out, (x, gain, bias), grad)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ``ids`` of shape [B, T] -> [B, T, D]."""
    ids = np.asarray(ids, dtype=np.int64)
    V = weight.shape[0]

    def grad(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gw,)

    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise TargetOutOfRange(f"token id out of range [0, {V})")
    return _result(weight.data[ids], (weight,), grad)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def weighted_sum(xs: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Sum of ``w_i * x_i`` over scalar tensors."""
    ws = [float(w) for w in weights]
    total = np.asarray(np.sum([w * x.data for w, x in zip(ws, xs)]), dtype=xs[0].dtype)
    return _result(total, tuple(xs), lambda g: tuple(g * w for w in ws))


def masked_mean_rows(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of ``[B, S, D]`` using only positions where ``mask``."""
    m = np.asarray(mask, dtype=x.dtype)[:, :, None]
    count = np.maximum(m.sum(axis=1), 1.0)
    out = (x.data * m).sum(axis=1) / count
    return _result(out, (x,), lambda g: ((g / count)[:, None, :] * m,))


def cross_entropy_smoothed(logits: Tensor, targets: np.ndarray, epsilon: float = 0.0,
                           ignore_id: int | None = 0) -> Tensor:
    """Label-smoothed cross entropy averaged over non-ignored rows.

    The target class gets ``1 - epsilon``; the other ``V - 1`` classes share
    ``epsilon`` equally. If every row is ignored the loss is 0 and the
    gradient is zero.
    """
    N, V = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != N:
        raise ShapeMismatch(f"{N} logit rows but {targets.shape[0]} targets")
    keep = np.ones(N, dtype=bool) if ignore_id is None else targets != ignore_id
    bad = keep & ((targets < 0) | (targets >= V))
    if bad.any():
        raise TargetOutOfRange(f"target id {targets[bad][0]} outside [0, {V})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    q = np.full((N, V), epsilon / (V - 1) if V > 1 else 0.0, dtype=logits.dtype)
    safe = np.where(keep, targets, 0)
    q[np.arange(N), safe] = 1.0 - epsilon if V > 1 else 1.0
    q *= keep[:, None]
    count = int(keep.sum())
    denom = max(count, 1)
    loss = -(q * logp).sum() / denom

    def grad(g):
        p = np.exp(logp)
        return (g * (p * q.sum(axis=-1, keepdims=True) - q) / denom,)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), grad)


def parameter(data, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)
