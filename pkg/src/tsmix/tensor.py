"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation produces a ``Tensor`` that carries a record
of how it was made (operation name, parent tensors, a closure computing the
parents' gradients). ``backward`` collects the records reachable from a
scalar loss into a :class:`ComputationTape`, ordered by creation id, and
walks it once in reverse.

The graph is rebuilt on every forward pass; nothing is cached between
steps.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, DimensionError, ValidationError

LAYER_NORM_EPS = 1e-5
SIMPLEX_TOL = 1e-6

_grad_enabled = contextvars.ContextVar("tsmix_grad_enabled", default=True)
_ids = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, oracles)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class _Record:
    __slots__ = ("id", "op", "parents", "backward_fn", "saved")

    def __init__(self, op, parents, backward_fn, saved=None):
        self.id = next(_ids)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.saved = saved


class Tensor:
    """An n-dimensional float64 array that can take part in autodiff."""

    __array_priority__ = 100.0

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._record: _Record | None = None

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], op: str, backward_fn, saved=None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._record = None
    out.requires_grad = False
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._record = _Record(op, tuple(parents), backward_fn, saved)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), "mul", backward)


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data

    def backward(g):
        return (g * exponent * ad ** (exponent - 1.0),)

    return _result(ad**exponent, (a,), "pow", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), "relu", backward)


# -- shape --------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape

    def backward(g):
        return (g.reshape(orig),)

    return _result(x.data.reshape(shape), (x,), "reshape", backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _result(x.data.transpose(axes), (x,), "transpose", backward)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``x`` along ``axis`` (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, (slice(None),) * (axis % len(shape)) + (idx,), g)
        return (out,)

    return _result(np.take(x.data, idx, axis=axis), (x,), "take", backward)


def tensor_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), "sum", backward)


def tensor_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis, keepdims), 1.0 / n)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), "matmul", backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``, any leading shape."""
    n_in, n_out = weight.shape
    if x.shape[-1] != n_in:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, n_in)
    wd = weight.data
    out = x2 @ wd
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ wd.T).reshape(lead + (n_in,))
        gw = x2.T @ g2
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out.reshape(lead + (n_out,)), parents, "linear", backward)


# -- normalisation / probabilities -------------------------------------------


def _rows(arr: np.ndarray, axis: int):
    moved = np.moveaxis(arr, axis, -1)
    return np.ascontiguousarray(moved.reshape(-1, moved.shape[-1])), moved.shape


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    rows, moved_shape = _rows(x.data, axis)
    y2 = kernels.softmax_rows(rows)
    y = np.moveaxis(y2.reshape(moved_shape), -1, axis)

    def backward(g):
        g2, _ = _rows(g, axis)
        gx = kernels.softmax_rows_backward(y2, g2)
        return (np.moveaxis(gx.reshape(moved_shape), -1, axis),)

    return _result(y, (x,), "softmax", backward)


def check_simplex(rows: np.ndarray, tol: float = SIMPLEX_TOL, what: str = "label") -> None:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"{what} rows must be 2-D, got shape {rows.shape}")
    if rows.size == 0:
        return
    bad = (rows.min(axis=1) < -tol) | (np.abs(rows.sum(axis=1) - 1.0) > tol)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"{what} row {i} is not on the probability simplex: {rows[i]}")


def cross_entropy_soft(logits: Tensor, targets) -> Tensor:
    """Batch-mean of ``-sum_c targets[c] * log_softmax(logits)[c]``."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise DimensionError(
            f"cross_entropy_soft: logits {logits.shape} and targets {t.shape} must match as [batch, C]"
        )
    check_simplex(t, what="target")
    batch = logits.shape[0]
    ld = np.ascontiguousarray(logits.data)
    logp = kernels.log_softmax_rows(ld)
    loss = -np.einsum("ij,ij->", t, logp) / batch

    def backward(g):
        p = np.exp(logp)
        return (g * (p * t.sum(axis=1, keepdims=True) - t) / batch,)

    return _result(np.asarray(loss), (logits,), "cross_entropy_soft", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({n},) for input {x.shape}"
        )
    x2 = np.ascontiguousarray(x.data.reshape(-1, n))
    out, xhat, rstd = kernels.layer_norm_rows(x2, gain.data, bias.data, eps)
    gd = gain.data

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, n))
        gx, ggain, gbias = kernels.layer_norm_rows_backward(g2, xhat, rstd, gd)
        return gx.reshape(x.shape), ggain, gbias

    return _result(out.reshape(x.shape), (x, gain, bias), "layer_norm", backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), "dropout", backward, saved=mask)


# -- backward -----------------------------------------------------------------


@dataclass
class TapeEntry:
    op: str
    input_ids: tuple[int | None, ...]
    output_id: int
    saved: object = None


@dataclass
class ComputationTape:
    """Topologically ordered records reachable from one output tensor."""

    records: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "ComputationTape":
        seen: dict[int, _Record] = {}
        stack = [loss._record] if loss._record is not None else []
        while stack:
            rec = stack.pop()
            if rec.id in seen:
                continue
            seen[rec.id] = rec
            for p in rec.parents:
                if p._record is not None and p._record.id not in seen:
                    stack.append(p._record)
        return cls([seen[k] for k in sorted(seen)])

    def entries(self) -> list[TapeEntry]:
        return [
            TapeEntry(
                r.op,
                tuple(p._record.id if p._record is not None else None for p in r.parents),
                r.id,
                r.saved,
            )
            for r in self.records
        ]

    def __len__(self) -> int:
        return len(self.records)


def backward(loss: Tensor, tape: ComputationTape | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf.

    Returns the gradients contributed by this call, keyed by leaf tensor.
    Repeated calls add to existing ``.grad`` buffers.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    seed = np.ones(loss.shape)
    leaf_grads: dict[Tensor, np.ndarray] = {}
    if loss._record is None:
        leaf_grads[loss] = seed
    else:
        if tape is None:
            tape = ComputationTape.from_loss(loss)
        pending = {loss._record.id: seed}
        for rec in reversed(tape.records):
            g = pending.pop(rec.id, None)
            if g is None:
                continue
            for p, pg in zip(rec.parents, rec.backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                if p._record is not None:
                    key = p._record.id
                    pending[key] = pg if key not in pending else pending[key] + pg
                else:
                    leaf_grads[p] = pg if p not in leaf_grads else leaf_grads[p] + pg
    for leaf, g in leaf_grads.items():
        leaf.grad = np.array(g, dtype=np.float64) if leaf.grad is None else leaf.grad + g
    return leaf_grads


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.empty_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)

    def value(arr):
        with no_grad():
            v = f(Tensor(arr))
        return float(v.item() if isinstance(v, Tensor) else v)

    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = value(base)
        flat[i] = old - eps
        lo = value(base)
        flat[i] = old
        out[i] = (hi - lo) / (2.0 * eps)
    return Tensor(grad)
