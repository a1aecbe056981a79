"""Reverse-mode automatic differentiation over numpy arrays.

A recorded-tape engine sized for small transformer stacks: every op returns a
new immutable ``Tensor`` whose closure knows how to push gradients back to its
parents. The op vocabulary is deliberately small (linear maps, softmax
attention, layer normalization, GELU, embedding lookup, reshapes, reductions,
L1/L2 losses) plus a straight-through combinator for non-differentiable
quantizers. A finite-difference checker ships with the engine so every op and
every composed loss graph can be verified against central differences.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf


class NonFiniteError(ArithmeticError):
    """Raised when an op would produce NaN or Inf values."""


_tape_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _tape_enabled
        self._prev = _tape_enabled
        _tape_enabled = False
        return self

    def __exit__(self, *exc):
        global _tape_enabled
        _tape_enabled = self._prev
        return False


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    return arr


class Tensor:
    """Immutable dense array with an optional backward closure.

    ``data`` is float64 by default (float32 is accepted for inference mode).
    Gradients accumulate into ``grad`` during :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None,
                 _op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- basic protocol -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse sweep from a scalar; accumulates into reachable ``grad``s."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, power(other, -1.0))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _node(value: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _tape_enabled and any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, _parents=tuple(parents),
                      _backward=backward, _op=op)
    return Tensor(value, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along broadcast axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ops ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), backward, "mul")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _node(out, (a,), backward, "power")


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _node(out, (a,), backward, "exp")


def tlog(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _node(out, (a,), backward, "log")


def tsin(a) -> Tensor:
    a = as_tensor(a)
    out = np.sin(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.cos(a.data))

    return _node(out, (a,), backward, "sin")


def tcos(a) -> Tensor:
    a = as_tensor(a)
    out = np.cos(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g * np.sin(a.data))

    return _node(out, (a,), backward, "cos")


def ttanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out * out))

    return _node(out, (a,), backward, "tanh")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    out = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _node(out, (a,), backward, "abs")


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * a.data)

    return _node(out, (a,), backward, "square")


def gelu(a) -> Tensor:
    """Exact GELU: x * Phi(x) with the Gaussian CDF."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))
    out = x * cdf

    def backward(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            a._accumulate(g * (cdf + x * pdf))

    return _node(out, (a,), backward, "gelu")


# -- shape ops ----------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _node(out, (a,), backward, "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, ax1, ax2))

    return _node(out, (a,), backward, "swapaxes")


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                part._accumulate(g[tuple(index)])

    return _node(out, tuple(parts), backward, "concat")


def take_slice(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            a._accumulate(full)

    return _node(out, (a,), backward, "slice")


def take_rows(table, indices) -> Tensor:
    """Embedding lookup: gather rows of ``table`` at integer ``indices``."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("take_rows needs integer indices")
    out = table.data[idx]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            table._accumulate(gt)

    return _node(out, (table,), backward, "take_rows")


# -- reductions and losses -----------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _node(out, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l1_loss(a, b) -> Tensor:
    """Mean absolute difference."""
    return tmean(tabs(add(as_tensor(a), mul(as_tensor(b), -1.0))))


def l2_loss(a, b) -> Tensor:
    """Mean squared difference."""
    return tmean(square(add(as_tensor(a), mul(as_tensor(b), -1.0))))


# -- structural ops --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects arrays of rank >= 2")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(out, (a, b), backward, "matmul")


def masked_softmax(scores, mask=None) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is False get weight 0.

    A query row with no admissible key is a contract violation and raises
    ``ValueError('degenerate attention row')``.
    """
    scores = as_tensor(scores)
    x = scores.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not m.any(axis=-1).all():
            raise ValueError("degenerate attention row")
        z = np.where(m, x, -np.inf)
    else:
        m = None
        z = x
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if m is not None:
        e = np.where(m, e, 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if scores.requires_grad:
            inner = (g * out).sum(axis=-1, keepdims=True)
            scores._accumulate(out * (g - inner))

    return _node(out, (scores,), backward, "masked_softmax")


def attention(q, k, v, bias=None, mask=None) -> Tensor:
    """Scaled dot-product attention with optional additive bias and boolean mask.

    Shapes: q (..., L_q, d), k (..., L_k, d), v (..., L_k, d_v); bias broadcasts
    against the (..., L_q, L_k) score matrix, mask is boolean with the same
    broadcast rule. Masked keys receive exactly zero weight.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ValueError("query/key width mismatch")
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ValueError("key/value length mismatch")
    scale = 1.0 / math.sqrt(q.data.shape[-1])
    scores = mul(matmul(q, swapaxes(k, -1, -2)), scale)
    if bias is not None:
        scores = add(scores, as_tensor(bias))
    weights = masked_softmax(scores, mask)
    return matmul(weights, v)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = as_tensor(x)
    mu = tmean(x, axis=-1, keepdims=True)
    centered = add(x, mul(mu, -1.0))
    var = tmean(square(centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def stop_gradient(a) -> Tensor:
    """Identity with zero partial derivatives."""
    a = as_tensor(a)
    return Tensor(a.data.copy(), _op="stop_gradient")


def straight_through(grad_path: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value`` exactly; route gradients unchanged into ``grad_path``.

    The straight-through rule for quantizers: the output carries the quantized
    values bit-for-bit while the backward pass treats the op as identity.
    """
    grad_path = as_tensor(grad_path)
    value = np.asarray(value)
    if value.shape != grad_path.data.shape:
        raise ValueError("straight_through shapes must match")

    def backward(g):
        if grad_path.requires_grad:
            grad_path._accumulate(g)

    return _node(value.copy(), (grad_path,), backward, "straight_through")


# -- parameters -----------------------------------------------------------------

class ParamStore:
    """Named parameter registry with per-parameter gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(array), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: self._params[n].data.copy() for n in self.names()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            arr = np.asarray(state[name])
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for '{name}': "
                                 f"{arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.astype(tensor.data.dtype)


def backward(loss: Tensor, params: ParamStore | None = None) -> ParamStore | None:
    """Backpropagate a scalar loss; unreachable parameters get zero gradient."""
    loss.backward()
    if params is not None:
        for _, t in params.items():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
    return params


# -- verification -----------------------------------------------------------------

def finite_diff_check(fn: Callable[[Tensor], Tensor], point: np.ndarray,
                      eps: float = 1e-5) -> float:
    """Compare the tape gradient of ``fn`` at ``point`` with central differences.

    Returns max over coordinates of |analytic - central| / max(1, |central|).
    ``fn`` must map a Tensor to a scalar Tensor and be deterministic.
    """
    point = np.asarray(point, dtype=np.float64)
    leaf = Tensor(point.copy(), requires_grad=True)
    out = fn(leaf)
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued fn")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(point)

    flat = point.ravel()
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += eps
            f_plus = fn(Tensor(bumped.reshape(point.shape))).item()
            bumped[i] -= 2.0 * eps
            f_minus = fn(Tensor(bumped.reshape(point.shape))).item()
            central = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(analytic.ravel()[i] - central) / max(1.0, abs(central))
            worst = max(worst, rel)
    return worst
