"""Reverse-mode differentiation on array-valued nodes, MLPs and Adam.

Every op in this module accepts either plain numpy arrays or :class:`Tensor`
objects. With no tensor among the inputs the op is evaluated eagerly in numpy
and nothing is recorded, so the geometry code can be written once and reused
both for pure evaluation and for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, TapeStateError

# Below this threshold the smooth series branches are used instead of the
# closed forms (which lose all precision as u -> 0).
_SERIES_CUTOFF = 1e-6


class Tape:
    """Append-only record of the ops applied to its leaves.

    Nodes are appended in creation order, which is already a topological
    order, so :meth:`backward` is a single reverse sweep.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self._grads: list[np.ndarray | None] | None = None

    def leaf(self, value) -> Tensor:
        return Tensor(np.array(value, dtype=np.float64), self, ())

    def _record(self, node: Tensor) -> int:
        self.nodes.append(node)
        self._grads = None
        return len(self.nodes) - 1

    def backward(self, output: Tensor) -> None:
        if output.tape is not self:
            raise TapeStateError("output does not belong to this tape")
        if output.value.size != 1:
            raise DimensionError("backward needs a scalar output")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[output.index] = np.ones_like(output.value)
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for parent, vjp in self.nodes[i].parents:
                pg = vjp(g)
                j = parent.index
                grads[j] = pg if grads[j] is None else grads[j] + pg
        self._grads = grads

    def grad(self, node: Tensor) -> np.ndarray:
        if self._grads is None:
            raise TapeStateError("backward has not been run on this tape")
        g = self._grads[node.index]
        return np.zeros_like(node.value) if g is None else g


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, value: np.ndarray, tape: Tape, parents: tuple) -> None:
        self.value = value
        self.tape = tape
        self.parents = parents
        self.index = tape._record(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Tensor({self.value!r})"

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value_of(x) -> np.ndarray:
    """The numeric value behind ``x`` (tensor or array-like)."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Tensor):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeStateError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(value, tape: Tape, parts: Sequence[tuple[object, Callable]]) -> Tensor:
    parents = tuple((p, fn) for p, fn in parts if isinstance(p, Tensor))
    return Tensor(np.asarray(value, dtype=np.float64), tape, parents)


# -- elementwise binary ops ------------------------------------------------

def add(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if tape is None:
        return av + bv
    return _node(av + bv, tape, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if tape is None:
        return av - bv
    return _node(av - bv, tape, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(-g, bv.shape)),
    ])


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if tape is None:
        return av * bv
    return _node(av * bv, tape, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def div(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if tape is None:
        return out
    return _node(out, tape, [
        (a, lambda g: _unbroadcast(g / bv, av.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
    ])


def neg(a):
    tape = _tape_of(a)
    av = value_of(a)
    if tape is None:
        return -av
    return _node(-av, tape, [(a, lambda g: -g)])


# -- elementwise unary ops -------------------------------------------------

def _unary(a, f: Callable, df: Callable):
    """Apply ``f`` with local derivative ``df(x, f(x))``."""
    tape = _tape_of(a)
    av = value_of(a)
    out = f(av)
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: g * df(av, out))])


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def sinh(a):
    return _unary(a, np.sinh, lambda x, y: np.cosh(x))


def cosh(a):
    return _unary(a, np.cosh, lambda x, y: np.sinh(x))


def arccosh(a):
    return _unary(a, np.arccosh, lambda x, y: 1.0 / np.sqrt(x * x - 1.0))


def logistic(a):
    def f(x):
        return np.exp(-np.logaddexp(0.0, -x))

    return _unary(a, f, lambda x, y: y * (1.0 - y))


def log_logistic(a):
    """log(logistic(a)) without underflow for very negative ``a``."""
    def f(x):
        return -np.logaddexp(0.0, -x)

    return _unary(a, f, lambda x, y: 1.0 - np.exp(y))


def cosh_sqrt(a):
    """cosh(sqrt(u)) for u >= 0; entire in u, so smooth through 0."""
    def f(u):
        return np.cosh(np.sqrt(np.maximum(u, 0.0)))

    return _unary(a, f, lambda u, y: 0.5 * sinhc_sq(u))


def sinhc_sq(a):
    """sinh(sqrt(u)) / sqrt(u) for u >= 0, equal to 1 at u = 0."""
    def f(u):
        u = np.maximum(u, 0.0)
        small = u < _SERIES_CUTOFF
        r = np.sqrt(np.where(small, 1.0, u))
        return np.where(small, 1.0 + u / 6.0 + u * u / 120.0, np.sinh(r) / r)

    def df(u, y):
        u = np.maximum(u, 0.0)
        small = u < _SERIES_CUTOFF
        safe = np.where(small, 1.0, u)
        closed = (np.cosh(np.sqrt(safe)) - np.where(small, 1.0, y)) / (2.0 * safe)
        return np.where(small, 1.0 / 6.0 + u / 60.0, closed)

    return _unary(a, f, df)


def asinhc_sq(a):
    """asinh(sqrt(u)) / sqrt(u) for u >= 0, equal to 1 at u = 0."""
    def f(u):
        u = np.maximum(u, 0.0)
        small = u < _SERIES_CUTOFF
        r = np.sqrt(np.where(small, 1.0, u))
        return np.where(small, 1.0 - u / 6.0 + 3.0 * u * u / 40.0, np.arcsinh(r) / r)

    def df(u, y):
        u = np.maximum(u, 0.0)
        small = u < _SERIES_CUTOFF
        safe = np.where(small, 1.0, u)
        closed = (1.0 / np.sqrt(1.0 + safe) - np.where(small, 1.0, y)) / (2.0 * safe)
        return np.where(small, -1.0 / 6.0 + 3.0 * u / 20.0, closed)

    return _unary(a, f, df)


def log_sinhc_sq(a):
    """log(sinh(sqrt(u)) / sqrt(u)) for u >= 0.

    Stays finite for large u, where sinh itself would overflow.
    """
    def f(u):
        u = np.maximum(u, 0.0)
        small = u < _SERIES_CUTOFF
        r = np.sqrt(np.where(small, 1.0, u))
        moderate = np.log(np.sinh(np.minimum(r, 20.0)) / r)
        # large r: log(sinh r) = r + log1p(-exp(-2r)) - log 2, no overflow
        large = r + np.log1p(-np.exp(-2.0 * r)) - math.log(2.0) - np.log(r)
        return np.where(small, u / 6.0 - u * u / 180.0, np.where(r < 20.0, moderate, large))

    def df(u, y):
        u = np.maximum(u, 0.0)
        small = u < _SERIES_CUTOFF
        safe = np.where(small, 1.0, u)
        r = np.sqrt(safe)
        closed = (r / np.tanh(r) - 1.0) / (2.0 * safe)
        return np.where(small, 1.0 / 6.0 - u / 90.0, closed)

    return _unary(a, f, df)


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; gradient 1 strictly inside, 0 where clipped."""
    tape = _tape_of(a)
    av = value_of(a)
    out = np.clip(av, lo, hi)
    if tape is None:
        return out
    inside = np.ones_like(av, dtype=bool)
    if lo is not None:
        inside &= av >= lo
    if hi is not None:
        inside &= av <= hi
    return _node(out, tape, [(a, lambda g: g * inside)])


def where(cond, a, b):
    """Select elementwise; ``cond`` is treated as a constant."""
    cond = np.asarray(value_of(cond), dtype=bool)
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = np.where(cond, av, bv)
    if tape is None:
        return out
    return _node(out, tape, [
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)),
    ])


# -- reductions and structural ops -----------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    tape = _tape_of(a)
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if tape is None:
        return out

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, tape, [(a, vjp)])


def mean(a, axis=None):
    n = value_of(a).size if axis is None else value_of(a).shape[axis]
    return reduce_sum(a, axis=axis) / float(n)


def dot(a, b, axis=-1, keepdims=False):
    return reduce_sum(mul(a, b), axis=axis, keepdims=keepdims)


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise DimensionError("matmul expects 2-d operands")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"cannot multiply {av.shape} by {bv.shape}")
    out = av @ bv
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def getitem(a, idx):
    tape = _tape_of(a)
    av = value_of(a)
    out = av[idx]
    if tape is None:
        return out

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return full

    return _node(out, tape, [(a, vjp)])


def concat(parts: Sequence, axis: int = -1):
    tape = _tape_of(*parts)
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    links = []
    for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(lo), int(hi))
        links.append((p, lambda g, sl=tuple(sl): g[sl]))
    return _node(out, tape, links)


def broadcast_to(a, shape):
    tape = _tape_of(a)
    av = value_of(a)
    out = np.broadcast_to(av, shape).copy()
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: _unbroadcast(g, av.shape))])


# -- networks ---------------------------------------------------------------

@dataclass
class Mlp:
    """Fully connected net with tanh between consecutive affine layers."""

    layer_dims: list[int]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, layer_dims: Sequence[int], rng: np.random.Generator,
             zero_last: bool = True) -> Mlp:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

        With ``zero_last`` the final affine layer starts at zero so the net
        initially outputs zeros.
        """
        dims = list(layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise DimensionError(f"bad layer dims {dims}")
        weights, biases = [], []
        for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            bound = 1.0 / math.sqrt(d_in)
            w = rng.uniform(-bound, bound, size=(d_in, d_out))
            if zero_last and k == len(dims) - 2:
                w = np.zeros_like(w)
            weights.append(w)
            biases.append(np.zeros(d_out))
        return cls(dims, weights, biases)

    @property
    def num_params(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        params = list(params)
        self.weights = [np.asarray(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.asarray(p, dtype=np.float64) for p in params[1::2]]

    def forward(self, x, params: Sequence | None = None):
        """Evaluate on a batch ``x`` of shape (batch, layer_dims[0]).

        ``params`` optionally overrides the stored arrays (e.g. with tape
        leaves) in the order returned by :meth:`parameters`.
        """
        if value_of(x).shape[-1] != self.layer_dims[0]:
            raise DimensionError(
                f"input width {value_of(x).shape[-1]} != {self.layer_dims[0]}")
        if params is None:
            params = self.parameters()
        h = x
        n_layers = len(self.layer_dims) - 1
        for k in range(n_layers):
            h = add(matmul(h, params[2 * k]), params[2 * k + 1])
            if k < n_layers - 1:
                h = tanh(h)
        return h

    __call__ = forward



# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise DimensionError(f"param {i} has shape {np.shape(p)}, grad {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out
