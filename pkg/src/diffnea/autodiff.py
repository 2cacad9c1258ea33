"""Reverse-mode automatic differentiation on a recording tape.

A :class:`Var` wraps a numpy value (a 0-d value is the scalar case) and
remembers the primitive that produced it. Every primitive appends one
record to the owning :class:`Tape`; :meth:`Tape.gradient` replays the
records once, newest first, accumulating adjoints.

The module-level functions (``sin``, ``matmul``, ``stack``...) accept plain
floats/ndarrays as well as ``Var`` and only record when a ``Var`` is
involved, so numerical code written against them runs unchanged on plain
numbers (simulation) and on tape variables (identification).
"""
from __future__ import annotations

import numpy as np


class DomainError(ArithmeticError):
    """A primitive was evaluated outside its domain (log/sqrt/division)."""

    def __init__(self, primitive, message=""):
        self.primitive = primitive
        super().__init__(f"{primitive}: {message}" if message else primitive)


class Tape:
    """Ordered log of the primitives evaluated during one forward pass."""

    def __init__(self):
        self.records = []

    def variable(self, value):
        """Create an input leaf on this tape."""
        v = Var(np.array(value, dtype=float), self, ())
        return v

    def gradient(self, output, inputs):
        """Adjoints of the scalar ``output`` w.r.t. each ``Var`` in ``inputs``."""
        if not isinstance(output, Var):
            return [np.zeros_like(x.value) for x in inputs]
        if output.value.size != 1:
            raise ValueError("gradient requires a scalar output")
        adj = {output._index: np.ones_like(output.value)}
        for node in reversed(self.records[: output._index + 1]):
            g = adj.get(node._index)
            if g is None or not node._parents:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(g)
                k = parent._index
                adj[k] = adj[k] + contrib if k in adj else contrib
        return [adj.get(x._index, np.zeros_like(x.value)) for x in inputs]


class Var:
    """Differentiable value living on a :class:`Tape`."""

    __slots__ = ("value", "_tape", "_parents", "_index")
    # make numpy defer binary operators to the Var implementations
    __array_ufunc__ = None

    def __init__(self, value, tape, parents):
        self.value = value
        self._tape = tape
        self._parents = parents
        self._index = len(tape.records)
        tape.records.append(self)

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __float__(self):
        return float(self.value)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return _unary(-self.value, self, lambda g: -g)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("Var exponents are not supported")
        p = float(p)
        x = self.value
        return _unary(x**p, self, lambda g: g * p * x ** (p - 1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        x = self.value
        out = x[key]

        def vjp(g):
            full = np.zeros_like(x)
            np.add.at(full, key, g)
            return full

        return _unary(out, self, vjp)

    # comparisons act on values so that code may branch on them
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    # -- shape helpers -------------------------------------------------
    @property
    def mT(self):
        return swapaxes(self, -1, -2)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)


# ----------------------------------------------------------------------
# internals


def _val(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x._tape
    return None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _unary(out, x, vjp):
    return Var(np.asarray(out, dtype=float), x._tape, ((x, vjp),))


def _binary(out, a, b, vjp_a, vjp_b):
    parents = []
    if isinstance(a, Var):
        parents.append((a, vjp_a))
    if isinstance(b, Var):
        parents.append((b, vjp_b))
    return Var(np.asarray(out, dtype=float), _tape_of(a, b), tuple(parents))


def value(x):
    """Underlying numeric value of ``x`` (identity for plain numbers)."""
    return x.value if isinstance(x, Var) else x


def is_var(x):
    return isinstance(x, Var)


# ----------------------------------------------------------------------
# primitives


def add(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a + b
    av, bv = _val(a), _val(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _binary(av + bv, a, b, lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb))


def sub(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a - b
    av, bv = _val(a), _val(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _binary(av - bv, a, b, lambda g: _unbroadcast(g, sa), lambda g: -_unbroadcast(g, sb))


def mul(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a * b
    av, bv = _val(a), _val(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _binary(
        av * bv, a, b,
        lambda g: _unbroadcast(g * bv, sa),
        lambda g: _unbroadcast(g * av, sb),
    )


def div(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return a / b
    av, bv = _val(a), _val(b)
    if np.any(bv == 0):
        raise DomainError("div", "division by zero")
    sa, sb = np.shape(av), np.shape(bv)
    out = av / bv
    return _binary(
        out, a, b,
        lambda g: _unbroadcast(g / bv, sa),
        lambda g: _unbroadcast(-g * out / bv, sb),
    )


def matmul(a, b):
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.matmul(a, b)
    av, bv = np.asarray(_val(a), dtype=float), np.asarray(_val(b), dtype=float)
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    out2 = np.matmul(a2, b2)
    out = np.matmul(av, bv)

    def expand(g):
        g = np.asarray(g).reshape(out.shape)
        if bv.ndim == 1:
            g = g[..., None]
        if av.ndim == 1:
            g = g[..., None, :]
        return g.reshape(out2.shape)

    def vjp_a(g):
        ga = np.matmul(expand(g), np.swapaxes(b2, -1, -2))
        if av.ndim == 1:
            ga = ga[..., 0, :]
            return _unbroadcast(ga, av.shape)
        return _unbroadcast(ga, av.shape)

    def vjp_b(g):
        gb = np.matmul(np.swapaxes(a2, -1, -2), expand(g))
        if bv.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(gb, bv.shape)

    return _binary(out, a, b, vjp_a, vjp_b)


def _elementwise(np_fn, d_fn, name=None, check=None):
    def fn(x):
        if not isinstance(x, Var):
            return np_fn(x)
        xv = x.value
        if check is not None and check(xv):
            raise DomainError(name, "argument outside domain")
        out = np_fn(xv)
        return _unary(out, x, lambda g: g * d_fn(xv, out))

    fn.__name__ = name or np_fn.__name__
    return fn


sin = _elementwise(np.sin, lambda x, y: np.cos(x), "sin")
cos = _elementwise(np.cos, lambda x, y: -np.sin(x), "cos")
exp = _elementwise(np.exp, lambda x, y: y, "exp")
tanh = _elementwise(np.tanh, lambda x, y: 1.0 - y * y, "tanh")
log = _elementwise(np.log, lambda x, y: 1.0 / x, "log", check=lambda x: np.any(x <= 0))
sqrt = _elementwise(np.sqrt, lambda x, y: 0.5 / y, "sqrt", check=lambda x: np.any(x <= 0))
abs = _elementwise(np.abs, lambda x, y: np.sign(x), "abs")  # noqa: A001
relu = _elementwise(lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(float), "relu")


def _softplus(x):
    # log1p(exp(-|x|)) + max(x, 0) never overflows
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


softplus = _elementwise(_softplus, lambda x, y: _sigmoid(x), "softplus")
sigmoid = _elementwise(_sigmoid, lambda x, y: y * (1.0 - y), "sigmoid")


def sign(x):
    """Elementwise sign with sign(0) = 0; piecewise constant, so never recorded."""
    return np.sign(_val(x))


def square(x):
    return mul(x, x)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xv = x.value
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return _unary(out, x, vjp)


def mean(x, axis=None):
    n = np.size(_val(x)) if axis is None else np.shape(_val(x))[axis]
    return sum(x, axis=axis) / float(n)


def reshape(x, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    s = x.value.shape
    return _unary(x.value.reshape(shape), x, lambda g: g.reshape(s))


def swapaxes(x, a1, a2):
    if not isinstance(x, Var):
        return np.swapaxes(x, a1, a2)
    return _unary(np.swapaxes(x.value, a1, a2), x, lambda g: np.swapaxes(g, a1, a2))


def transpose(x):
    if not isinstance(x, Var):
        return np.transpose(x)
    return _unary(x.value.T, x, lambda g: g.T)


def broadcast_to(x, shape):
    if not isinstance(x, Var):
        return np.broadcast_to(x, shape)
    s = x.value.shape
    return _unary(np.broadcast_to(x.value, shape).copy(), x, lambda g: _unbroadcast(g, s))


def where(cond, a, b):
    cond = np.asarray(_val(cond), dtype=bool)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.where(cond, a, b)
    av, bv = _val(a), _val(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _binary(
        np.where(cond, av, bv), a, b,
        lambda g: _unbroadcast(np.where(cond, g, 0.0), sa),
        lambda g: _unbroadcast(np.where(cond, 0.0, g), sb),
    )


def concatenate(xs, axis=0):
    xs = list(xs)
    if not any(isinstance(x, Var) for x in xs):
        return np.concatenate(xs, axis=axis)
    vals = [np.asarray(_val(x), dtype=float) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            def vjp(g, i=i):
                return np.split(g, bounds, axis=axis)[i]
            parents.append((x, vjp))
    return Var(out, _tape_of(*xs), tuple(parents))


def stack(xs, axis=0):
    xs = list(xs)
    if not any(isinstance(x, Var) for x in xs):
        return np.stack(np.broadcast_arrays(*xs), axis=axis)
    vals = [np.asarray(_val(x), dtype=float) for x in xs]
    shape = np.broadcast_shapes(*[v.shape for v in vals])
    full = [np.broadcast_to(v, shape) for v in vals]
    out = np.stack(full, axis=axis)
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            s = vals[i].shape

            def vjp(g, i=i, s=s):
                return _unbroadcast(np.take(g, i, axis=axis), s)

            parents.append((x, vjp))
    return Var(out, _tape_of(*xs), tuple(parents))


def block(rows):
    """Assemble a block matrix from nested lists over the last two axes."""
    return concatenate([concatenate(list(r), axis=-1) for r in rows], axis=-2)


def zeros_like(x):
    return np.zeros(np.shape(_val(x)))


# ----------------------------------------------------------------------
# user-facing gradient utilities


def grad(f, x):
    """Gradient of the scalar function ``f`` at the parameter vector ``x``."""
    tape = Tape()
    xv = tape.variable(np.array(x, dtype=float))
    y = f(xv)
    (g,) = tape.gradient(y, [xv])
    return np.array(g, dtype=float)


def value_and_grad(f, x):
    tape = Tape()
    xv = tape.variable(np.array(x, dtype=float))
    y = f(xv)
    (g,) = tape.gradient(y, [xv])
    return float(np.asarray(value(y))), np.array(g, dtype=float)


def _central(f, x, h):
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = np.asarray(value(f(xp.reshape(x.shape))))[()]
        fm = np.asarray(value(f(xm.reshape(x.shape))))[()]
        flat[i] = (fp - fm) / (2 * x.dtype.type(h))
    return g


def numerical_grad(f, x, h=1e-6):
    """Central finite differences of ``f`` evaluated on plain arrays.

    Evaluation uses extended precision when ``f`` accepts it, so the difference
    quotient is not swamped by float64 roundoff on weakly sensitive coordinates.
    """
    x = np.array(x, dtype=float)
    try:
        g = _central(f, x.astype(np.longdouble), h)
    except TypeError:
        g = _central(f, x, h)
    return np.asarray(g, dtype=float)


def check_gradient(f, x, h=1e-6):
    """Max over coordinates of |AD - FD| / (|FD| + 1e-8)."""
    ad_g = grad(f, x)
    fd_g = numerical_grad(f, x, h)
    return float(np.max(np.abs(ad_g - fd_g) / (np.abs(fd_g) + 1e-8), initial=0.0))
