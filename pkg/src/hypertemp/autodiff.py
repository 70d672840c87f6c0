"""Array-level reverse-mode differentiation.

Every function in this module is polymorphic: called on plain numpy arrays it
evaluates eagerly and returns an array, called with at least one :class:`Var`
it records a node and returns a :class:`Var`.  The geometry and layer code is
written once against this surface and serves both the numeric and the
training paths.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Var", "Parameter", "Tape", "backward", "value", "is_var",
    "add", "sub", "mul", "div", "neg", "power", "matmul",
    "sum", "mean", "sqrt", "exp", "log", "log1p", "tanh", "artanh", "arcosh",
    "arcsinh", "arccos", "sinh", "cosh", "sigmoid", "relu", "abs", "clamp",
    "where", "concat", "stack", "reshape", "take", "logsumexp",
]


class Var:
    """A node in the recorded computation.

    Leaves are created by the user (usually as :class:`Parameter`); interior
    nodes come out of the functions in this module and carry the local
    vector-Jacobian products needed by :func:`backward`.
    """

    __array_priority__ = 1000
    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, val, requires_grad: bool = True, _parents=()):
        self.value = np.asarray(val, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[tuple[Var, Callable[[np.ndarray], np.ndarray]], ...] = _parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> Var:
        return transpose(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)


class Parameter(Var):
    """Trainable leaf living either in Euclidean space or on the ball."""

    __slots__ = ("space", "name")

    EUCLIDEAN = "euclidean"
    HYPERBOLIC = "hyperbolic"

    def __init__(self, val, space: str = "euclidean", name: str = ""):
        if space not in (self.EUCLIDEAN, self.HYPERBOLIC):
            raise ValueError(f"unknown parameter space {space!r}")
        super().__init__(np.array(val, dtype=np.float64), requires_grad=True)
        self.space = space
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, space={self.space}, shape={self.shape})"


def is_var(x) -> bool:
    return isinstance(x, Var)


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _node(val, *links) -> Var:
    parents = tuple((p, fn) for p, fn in links if isinstance(p, Var) and p.requires_grad)
    return Var(val, requires_grad=bool(parents), _parents=parents)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tape:
    """Topologically ordered record of the nodes behind one scalar output.

    Built from the output by depth-first search; ``nodes`` ends with the
    output itself so a reversed walk visits every node exactly once after all
    of its consumers.
    """

    def __init__(self, output: Var):
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order
        self.output = output

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Var]:
        return [n for n in self.nodes if not n._parents]


def backward(output: Var) -> Tape:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf."""
    if not isinstance(output, Var):
        raise TypeError("backward needs a recorded Var")
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    tape = Tape(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in node._parents:
            pg = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


# --- arithmetic -------------------------------------------------------------


def add(a, b):
    if not (is_var(a) or is_var(b)):
        return np.add(a, b)
    av, bv = value(a), value(b)
    return _node(av + bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    if not (is_var(a) or is_var(b)):
        return np.subtract(a, b)
    av, bv = value(a), value(b)
    return _node(av - bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    if not (is_var(a) or is_var(b)):
        return np.multiply(a, b)
    av, bv = value(a), value(b)
    return _node(av * bv,
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    if not (is_var(a) or is_var(b)):
        return np.divide(a, b)
    av, bv = value(a), value(b)
    out = av / bv
    return _node(out,
                 (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    if not is_var(a):
        return np.negative(a)
    return _node(-a.value, (a, lambda g: -g))


def power(a, k: float):
    if not is_var(a):
        return np.power(a, k)
    av = a.value
    return _node(av ** k, (a, lambda g: g * k * av ** (k - 1)))


def matmul(a, b):
    """``a @ b`` for a 2-D right operand or a 1-D/2-D left operand."""
    if not (is_var(a) or is_var(b)):
        return np.matmul(a, b)
    av, bv = value(a), value(b)

    def ga(g):
        if bv.ndim == 1:
            return _unbroadcast(np.multiply.outer(g, bv), av.shape)
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def gb(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g)
        if bv.ndim == 1:
            return np.einsum("...i,...->i", av, g)
        a2 = av.reshape(-1, av.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return a2.T @ g2

    return _node(av @ bv, (a, ga), (b, gb))


def transpose(a):
    if not is_var(a):
        return np.transpose(a)
    return _node(a.value.T, (a, lambda g: g.T))


# --- reductions and reshaping ----------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001
    if not is_var(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(np.sum(av, axis=axis, keepdims=keepdims), (a, vjp))


def mean(a, axis=None, keepdims=False):
    n = value(a).size if axis is None else value(a).shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) / n


def reshape(a, shape):
    if not is_var(a):
        return np.reshape(a, shape)
    s = a.shape
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(s)))


def take(a, idx):
    """Basic or advanced indexing with a scatter-add backward."""
    if not is_var(a):
        return np.asarray(a)[idx]
    s = a.shape

    def vjp(g):
        out = np.zeros(s)
        np.add.at(out, idx, g)
        return out

    return _node(a.value[idx], (a, vjp))


def concat(xs: Sequence, axis: int = -1):
    if not any(is_var(x) for x in xs):
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vals = [value(x) for x in xs]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def make(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _node(np.concatenate(vals, axis=axis), *[(x, make(i)) for i, x in enumerate(xs)])


def stack(xs: Sequence, axis: int = 0):
    if not any(is_var(x) for x in xs):
        return np.stack([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vals = [value(x) for x in xs]

    def make(i):
        return lambda g: np.take(g, i, axis=axis)

    return _node(np.stack(vals, axis=axis), *[(x, make(i)) for i, x in enumerate(xs)])


def where(cond, a, b):
    """Select elementwise; ``cond`` is a constant boolean array."""
    cond = np.asarray(cond, dtype=bool)
    if not (is_var(a) or is_var(b)):
        return np.where(cond, a, b)
    av, bv = value(a), value(b)
    return _node(np.where(cond, av, bv),
                 (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape)),
                 (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape)))


# --- elementwise functions --------------------------------------------------


def _unary(a, f: Callable, df: Callable):
    if not is_var(a):
        return f(np.asarray(a, dtype=np.float64))
    av = a.value
    out = f(av)
    return _node(out, (a, lambda g: g * df(av, out)))


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def log1p(a):
    return _unary(a, np.log1p, lambda x, y: 1.0 / (1.0 + x))


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def sinh(a):
    return _unary(a, np.sinh, lambda x, y: np.cosh(x))


def cosh(a):
    return _unary(a, np.cosh, lambda x, y: np.sinh(x))


def artanh(a):
    # callers clamp into (-1, 1); the derivative is taken at the given point
    return _unary(a, np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))


def arcosh(a):
    return _unary(a, np.arccosh, lambda x, y: 1.0 / np.sqrt(np.maximum(x * x - 1.0, 1e-300)))


def arcsinh(a):
    return _unary(a, np.arcsinh, lambda x, y: 1.0 / np.sqrt(1.0 + x * x))


def arccos(a):
    return _unary(a, np.arccos, lambda x, y: -1.0 / np.sqrt(np.maximum(1.0 - x * x, 1e-300)))


def arctan2(y, x):
    """Angle of the point (x, y); both arguments may be recorded."""
    if not (is_var(y) or is_var(x)):
        return np.arctan2(y, x)
    yv, xv = value(y), value(x)
    r2 = np.maximum(xv * xv + yv * yv, 1e-300)
    return _node(np.arctan2(yv, xv),
                 (y, lambda g: _unbroadcast(g * xv / r2, yv.shape)),
                 (x, lambda g: _unbroadcast(-g * yv / r2, xv.shape)))


def sigmoid(a):
    def f(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    return _unary(a, f, lambda x, y: y * (1.0 - y))


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def abs(a):  # noqa: A001
    return _unary(a, np.abs, lambda x, y: np.sign(x))


def clamp(a, lo=None, hi=None):
    """Clip into ``[lo, hi]``; the gradient is zero wherever clipping binds."""
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi

    def f(x):
        return np.clip(x, lo_, hi_)

    def df(x, y):
        return ((x > lo_) & (x < hi_)).astype(np.float64)

    return _unary(a, f, df)


def logsumexp(a, axis=-1, keepdims=False):
    m = np.max(value(a), axis=axis, keepdims=True)
    out = log(sum(exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = reshape(out, np.squeeze(value(out), axis=axis).shape)
    return out


def parameters_grads(params: Iterable[Var]) -> list[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
