"""Dense float64 linear algebra with a reverse-mode gradient tape.

Values are plain ``numpy.ndarray`` objects (1-D for vectors, 2-D for
matrices).  Operations accept either arrays or :class:`Node` objects; when no
argument is a ``Node`` the result is a plain array and nothing is recorded,
which keeps evaluation-only forward passes cheap.  Once a parameter has been
registered on a :class:`Tape` with :meth:`Tape.watch`, every operation that
touches it appends a node to that tape, and :meth:`Tape.backward` walks the
tape in reverse creation order (a valid reverse topological order).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DetachedNode, DimensionMismatch, NonFinite, ZeroVector

Matrix = np.ndarray
Vector = np.ndarray

NORM_EPS = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_finite(arr: np.ndarray, what: str = "input") -> None:
    if not np.isfinite(arr).all():
        raise NonFinite(f"{what} contains NaN or Inf")


def matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Build an immutable float64 matrix, optionally from flat row-major data."""
    arr = np.array(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise DimensionMismatch(f"expected {rows * cols} values, got {arr.size}")
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise DimensionMismatch(f"matrix must be 2-D, got shape {arr.shape}")
    _check_finite(arr, "matrix")
    return _frozen(arr)


def vector(data) -> Vector:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"vector must be 1-D, got shape {arr.shape}")
    _check_finite(arr, "vector")
    return _frozen(arr)


def identity(n: int) -> Matrix:
    return _frozen(np.eye(n))


def zeros(rows: int, cols: int) -> Matrix:
    return _frozen(np.zeros((rows, cols)))


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Node:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "grad", "parents", "vjp", "tape", "name")
    __array_ufunc__ = None  # make ``ndarray <op> Node`` defer to the Node's reflected op

    def __init__(self, value: np.ndarray, tape: "Tape", parents=(), vjp=None, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a tape node is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return total(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Tape:
    """Records operations for one forward pass and replays them backwards."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def watch(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        node = Node(np.asarray(value, dtype=np.float64), self, name=name)
        self.nodes.append(node)
        self.params[name] = node
        return node

    def watch_all(self, params: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {name: self.watch(name, value) for name, value in params.items()}

    def backward(self, loss) -> dict[str, np.ndarray]:
        """Return d(loss)/d(param) for every watched parameter.

        Parameters that do not influence ``loss`` get exact zeros.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise DetachedNode("loss is not a node on this tape")
        if loss.value.size != 1:
            raise DimensionMismatch(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            for parent, g in zip(node.parents, node.vjp(node.grad)):
                if g is None or not isinstance(parent, Node):
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        return {
            name: (np.zeros_like(node.value) if node.grad is None else np.asarray(node.grad))
            for name, node in self.params.items()
        }


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _find_tape(args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise DetachedNode("operands belong to different tapes")
    return tape


def _record(value: np.ndarray, parents: tuple, vjp: Callable) -> Node | np.ndarray:
    tape = _find_tape(parents)
    if tape is None:
        return value
    node = Node(value, tape, parents, vjp)
    tape.nodes.append(node)
    return node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def square(x):
    xv = value_of(x)
    return _record(xv * xv, (x,), lambda g: (2.0 * xv * g,))


def exp(x):
    out = np.exp(value_of(x))
    return _record(out, (x,), lambda g: (g * out,))


def log(x):
    xv = value_of(x)
    if (xv <= 0).any():
        raise NonFinite("log of a non-positive value")
    return _record(np.log(xv), (x,), lambda g: (g / xv,))


def xlogx(x):
    """Elementwise x*log(x) with the convention 0*log(0) = 0."""
    xv = value_of(x)
    if (xv < 0).any():
        raise NonFinite("xlogx of a negative value")
    pos = xv > 0
    safe = np.where(pos, xv, 1.0)
    out = np.where(pos, xv * np.log(safe), 0.0)
    return _record(out, (x,), lambda g: (g * np.where(pos, np.log(safe) + 1.0, 0.0),))


def relu(x):
    xv = value_of(x)
    mask = xv > 0
    return _record(xv * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    xv = value_of(x)
    _check_finite(xv)
    out = np.empty_like(xv, dtype=np.float64)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis: int = -1):
    """Softmax along ``axis`` (row-wise for matrices), max-shifted for stability."""
    xv = value_of(x)
    _check_finite(xv)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        gy = g * out
        return (gy - out * gy.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), vjp)


def log_softmax(x, axis: int = -1):
    xv = value_of(x)
    _check_finite(xv)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), vjp)


# -- reductions and shape ops ----------------------------------------------------


def total(x, axis=None):
    xv = value_of(x)
    out = xv.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return _record(np.asarray(out, dtype=np.float64), (x,), vjp)


def mean(x, axis=None):
    xv = value_of(x)
    count = xv.size if axis is None else xv.shape[axis]
    return mul(total(x, axis), 1.0 / count)


def transpose(x):
    xv = value_of(x)
    return _record(xv.T, (x,), lambda g: (g.T,))


def reshape(x, shape):
    xv = value_of(x)
    return _record(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def take(x, index):
    xv = value_of(x)
    out = xv[index]

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, index, g)
        return (full,)

    return _record(np.array(out, dtype=np.float64), (x,), vjp)


def concat(parts: Sequence, axis: int = 0):
    values = [value_of(p) for p in parts]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise DimensionMismatch(str(exc)) from exc
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(parts), vjp)


def stack(parts: Sequence):
    """Stack equal-length vectors as the rows of a matrix."""
    values = [value_of(p) for p in parts]
    try:
        out = np.stack(values)
    except ValueError as exc:
        raise DimensionMismatch(str(exc)) from exc
    return _record(out, tuple(parts), lambda g: tuple(g[i] for i in range(len(values))))


# -- products --------------------------------------------------------------------


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise DimensionMismatch(f"matmul needs 1-D or 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionMismatch(f"cannot multiply {av.shape} by {bv.shape}")
    out = av @ bv

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _record(np.asarray(out, dtype=np.float64), (a, b), vjp)


def dot(a, b):
    return matmul(a, b)


def cosine_sim(a, b):
    """Cosine similarity of two vectors; raises ZeroVector for near-zero norms."""
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape or av.ndim != 1:
        raise DimensionMismatch(f"cosine_sim needs equal-length vectors, got {av.shape}, {bv.shape}")
    na, nb = float(np.sqrt(av @ av)), float(np.sqrt(bv @ bv))
    if na < NORM_EPS or nb < NORM_EPS:
        raise ZeroVector("cosine similarity of a zero vector")
    c = float(av @ bv) / (na * nb)

    def vjp(g):
        return (
            g * (bv / (na * nb) - c * av / (na * na)),
            g * (av / (na * nb) - c * bv / (nb * nb)),
        )

    return _record(np.asarray(c), (a, b), vjp)


def add_to_rows(x, v):
    """Add vector ``v`` to every row of matrix ``x``."""
    xv, vv = value_of(x), value_of(v)
    if xv.ndim != 2 or vv.shape != (xv.shape[1],):
        raise DimensionMismatch(f"cannot broadcast {vv.shape} over rows of {xv.shape}")
    return add(x, v)


def scaled_dot_attention(q, k, v):
    """softmax(Q K^T / sqrt(d_k)) V with a row-wise softmax."""
    qv, kv, vv = value_of(q), value_of(k), value_of(v)
    if qv.ndim != 2 or kv.ndim != 2 or vv.ndim != 2:
        raise DimensionMismatch("attention operands must be matrices")
    if qv.shape[1] != kv.shape[1] or kv.shape[0] != vv.shape[0]:
        raise DimensionMismatch(f"incompatible attention shapes {qv.shape}, {kv.shape}, {vv.shape}")
    logits = matmul(q, transpose(k)) * (1.0 / math.sqrt(kv.shape[1]))
    return matmul(softmax(logits, axis=-1), v)


# -- finite differences -----------------------------------------------------------


def central_differences(
    fn: Callable[[Mapping[str, np.ndarray]], np.ndarray],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
) -> dict[str, np.ndarray]:
    """Central-difference derivatives of a (possibly vector-valued) function.

    ``fn`` maps a parameter dict to an array of outputs of shape ``(k,)``.  The
    result maps each parameter name to an array of shape ``(k, *param.shape)``.
    """
    work = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    out: dict[str, np.ndarray] = {}
    for name in names if names is not None else list(work):
        arr = work[name]
        flat = arr.reshape(-1)
        cols = []
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = np.atleast_1d(np.asarray(fn(work), dtype=np.float64))
            flat[i] = orig - eps
            minus = np.atleast_1d(np.asarray(fn(work), dtype=np.float64))
            flat[i] = orig
            cols.append((plus - minus) / (2.0 * eps))
        if cols:
            out[name] = np.stack(cols, axis=-1).reshape(len(cols[0]), *arr.shape)
        else:
            out[name] = np.zeros((0, *arr.shape))
    return out


def gradient_deviation(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> tuple[float, float]:
    """Max absolute and max relative deviation (relative to max(|a|, |n|, floor))."""
    if analytic.size == 0:
        return 0.0, 0.0
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(diff.max()), float((diff / scale).max())


def gradients_agree(
    analytic: np.ndarray, numeric: np.ndarray, abs_tol: float = 1e-4, rel_tol: float = 1e-3
) -> bool:
    """Elementwise |a - n| <= max(abs_tol, rel_tol * max(|a|, |n|))."""
    diff = np.abs(analytic - numeric)
    bound = np.maximum(abs_tol, rel_tol * np.maximum(np.abs(analytic), np.abs(numeric)))
    return bool((diff <= bound).all())
