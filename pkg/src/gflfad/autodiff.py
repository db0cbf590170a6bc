"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every primitive checks shapes up front (no implicit broadcasting; use
:func:`expand`), computes its forward value, and records a local backward
rule on the output. :func:`backward` sorts the recorded graph into a tape,
walks it once in reverse, and frees the graph so it cannot be replayed.

Tolerances used throughout the test-suite:

* float64: gradient checks at 1e-5 relative (step 1e-5), identities at 1e-9
* float32: training only, no gradient checks
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording the graph."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    """Inputs to a primitive do not satisfy its shape rule."""


class NonFiniteError(FloatingPointError):
    """A primitive produced or received NaN/Inf values."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar loss, replayed backward)."""


class Tensor:
    """Dense real array with an optional gradient slot.

    Tensors produced by primitives are treated as immutable. Trainable
    leaves are :class:`Parameter` instances, which the optimizer updates
    in place between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_freed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"
        self._freed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # convenience operators, all routed through the primitives below
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor; ``data`` may be replaced by the optimizer."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _result(op: str, value: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    # a finite sum implies finite entries; only fall back to the elementwise test otherwise
    if not np.isfinite(value.sum()) and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.op = op
    out._freed = False
    out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_inputs(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not isinstance(t, Tensor):
            raise TypeError(f"{op}: expected Tensor, got {type(t).__name__}")
        if t._freed:
            raise GraphError(f"{op}: input belongs to a graph already consumed by backward")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``(..., m, k) @ (..., k, n) -> (..., m, n)``.

    Leading (batch) extents must be identical; ranks must match.
    """
    _check_inputs("matmul", a, b)
    if a.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul: ranks must match and be >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _result("matmul", out, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _check_inputs("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    _check_inputs("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    return _result("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    _check_inputs("scale", a)
    c = float(c)
    return _result("scale", a.data * a.dtype.type(c), (a,), lambda g: (g * a.dtype.type(c),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default reverses the last two."""
    _check_inputs("transpose", a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need rank >= 2, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _result("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    _check_inputs("reshape", a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size or any(s < 0 for s in shape):
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    src = a.shape
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy broadcasting rules).

    This is the only place broadcasting happens; the backward sums over
    the broadcast axes.
    """
    _check_inputs("expand", a)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot expand {a.shape} to {shape}") from None
    lead = len(shape) - a.ndim
    src = a.shape

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        keep = tuple(i for i, s in enumerate(src) if s == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True)
        return (g.reshape(src),)

    return _result("expand", out, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    _check_inputs("concat", *tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def slice_(a: Tensor, index) -> Tensor:
    """Basic slicing (ints and slices only); backward scatters into zeros."""
    _check_inputs("slice", a)
    if not isinstance(index, tuple):
        index = (index,)
    for ix in index:
        if not isinstance(ix, (int, slice)):
            raise ShapeError(f"slice: only int/slice indices supported, got {type(ix).__name__}")
    try:
        out = a.data[index].copy()
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result("slice", out, (a,), bw)


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; ``mask`` (same shape, bool) marks allowed entries.

    Disallowed entries get probability exactly 0. Each slice must keep at
    least one allowed entry.
    """
    _check_inputs("softmax", a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} != input shape {a.shape}")
        if not np.all(mask.any(axis=axis)):
            raise ShapeError("softmax: a slice has no allowed entries")
        x = np.where(mask, x, -np.inf)
    e = x - x.max(axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    y = e

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result("softmax", y, (a,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply per-feature affine ``gamma``, ``beta`` (shape ``(C,)``)."""
    _check_inputs("layer_norm", x, gamma, beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta must be ({c},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return (gx, (g * xhat).sum(axis=red), g.sum(axis=red))

    return _result("layer_norm", out, (x, gamma, beta), bw)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    _check_inputs("gelu", a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _result("gelu", out, (a,), bw)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = tuple(sorted(ax % ndim for ax in axis))
    if len(set(out)) != len(out):
        raise ShapeError(f"duplicate axes {axis}")
    return out


def sum_(a: Tensor, axis=None) -> Tensor:
    _check_inputs("sum", a)
    axes = _norm_axes(axis, a.ndim)
    src = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), src).copy(),)

    return _result("sum", np.asarray(a.data.sum(axis=axes)), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    _check_inputs("mean", a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over shape {a.shape}")
    src = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), src) / count,)

    return _result("mean", np.asarray(a.data.mean(axis=axes)), (a,), bw)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Scalar mean of squared differences."""
    _check_inputs("mse", pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes differ {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise ShapeError("mse: empty input")
    d = pred.data - target.data
    n = d.size

    def bw(g):
        gd = (2.0 / n) * g * d
        return (gd, -gd)

    return _result("mse", np.asarray((d * d).mean()), (pred, target), bw)


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``.

    ``weights`` optionally gives one weight per class; the mean is then
    normalised by the summed weights of the batch labels.
    """
    _check_inputs("cross_entropy", logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (B, K), got {logits.shape}")
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({b},)")
    if labels.dtype.kind not in "iub" or np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"cross_entropy: labels must be integers in [0, {k})")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(b), labels]
    w = np.ones(b, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)[labels]
    denom = w.sum()
    loss = (w * nll).sum() / denom
    p = np.exp(z - logsum[:, None])

    def bw(g):
        d = p.copy()
        d[np.arange(b), labels] -= 1.0
        return ((g * w / denom)[:, None] * d,)

    return _result("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def gather(x: Tensor, idx) -> Tensor:
    """Row gather.

    ``x (V, C)`` with ``idx (K,)`` gives ``(K, C)``; ``x (B, V, C)`` with
    ``idx (B, K)`` gathers per batch element and gives ``(B, K, C)``.
    """
    _check_inputs("gather", x)
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise ShapeError("gather: integer indices required")
    if x.ndim == idx.ndim + 1 and x.ndim >= 2 and x.shape[: idx.ndim - 1] == idx.shape[:-1]:
        axis = idx.ndim - 1
    else:
        raise ShapeError(f"gather: index shape {idx.shape} incompatible with {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise ShapeError(f"gather: index out of range for extent {x.shape[axis]}")
    ix = np.expand_dims(idx, -1)
    out = np.take_along_axis(x.data, ix, axis=axis)

    def bw(g):
        full = np.zeros_like(x.data)
        if idx.ndim == 1:
            np.add.at(full, idx, g)
        else:
            lead = np.indices(idx.shape)[:-1]
            np.add.at(full, (*lead, idx), g)
        return (full,)

    return _result("gather", out, (x,), bw)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


class Tape:
    """Topologically ordered record of the primitives behind one output."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> dict:
    """Propagate d(loss)/d(leaf) to every ``requires_grad`` leaf.

    Gradients are written to ``leaf.grad`` (overwriting) and returned as a
    ``{leaf: grad}`` map. Leaves listed in ``params`` that the loss does not
    reach receive zero gradients. The graph is freed afterwards.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward: loss must be a Tensor")
    if loss.data.size != 1 or loss.ndim > 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._freed:
        raise GraphError("backward: graph already consumed; run a new forward pass")
    tape = Tape.from_output(loss)
    if any(node._freed for node in tape.nodes):
        raise GraphError("backward: graph already consumed; run a new forward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad:
                leaves[node] = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    for node in tape.nodes:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._freed = True
    for leaf, g in leaves.items():
        leaf.grad = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    for p in params:
        if p not in leaves:
            p.grad = np.zeros_like(p.data)
            leaves[p] = p.grad
    return {leaf: leaf.grad for leaf in leaves}


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``numeric`` is the central difference of ``f`` at ``point`` with the
    given step.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0, requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise GraphError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    backward(out, params=[x])
    analytic = x.grad.ravel()
    numeric = np.empty_like(analytic)
    flat = x0.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(Tensor(x0)).data)
        flat[i] = orig - step
        lo = float(f(Tensor(x0)).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * step)
    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], step: float = 1e-5) -> float:
    """Like :func:`grad_check`, but over every coordinate of existing parameters.

    ``loss_fn`` re-runs the forward pass reading the parameters' current data.
    """
    loss = loss_fn()
    if loss.data.size != 1:
        raise GraphError(f"grad_check_params: loss must be scalar, got shape {loss.shape}")
    backward(loss, params=params)
    worst = 0.0
    for p in params:
        analytic = p.grad.ravel().copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn().data)
            flat[i] = orig - step
            lo = float(loss_fn().data)
            flat[i] = orig
            num = (hi - lo) / (2 * step)
            worst = max(worst, abs(analytic[i] - num) / max(1.0, abs(num)))
    return worst
