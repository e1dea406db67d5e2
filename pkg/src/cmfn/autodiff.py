"""Exact derivatives for trial functions and their training loss.

Two pieces live here:

* :class:`Jet` - a truncated Taylor expansion along one input direction,
  stored as normalized coefficients ``c[k] = f^(k)(x0) / k!``.  Coefficients
  may be floats, numpy arrays (a whole batch of points at once) or tape
  :class:`Node` objects.
* :class:`Tape` / :class:`Node` - reverse accumulation over numpy arrays.
  Because the Taylor rules only use ``+ - *`` and elementary functions of the
  leading coefficient, running a jet computation with tape nodes as
  coefficients gives exact parameter gradients of quantities that contain
  input derivatives (reverse-over-forward).

Coefficients that are structurally zero are kept as the python float ``0.0``
so that seeded inputs (``[x0, 1, 0, ...]``) do not pay for dead terms.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Jet",
    "Node",
    "Tape",
    "NumericFault",
    "SingularOperation",
    "OrderError",
    "jet_const",
    "jet_var",
    "directional_seeds",
    "derivative",
    "exp",
    "sin",
    "cos",
    "tanh",
    "sinh",
    "cosh",
    "sigmoid",
    "pow_int",
    "grad",
    "value_and_grad",
    "gradcheck",
]


class NumericFault(FloatingPointError):
    """A non-finite value appeared while evaluating or differentiating."""

    def __init__(self, message: str, tag: str | None = None):
        super().__init__(message)
        self.tag = tag


class SingularOperation(ZeroDivisionError):
    pass


class OrderError(ValueError):
    pass


# --------------------------------------------------------------------------
# reverse mode
# --------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _value(x):
    return x.value if isinstance(x, Node) else x


class Node:
    """One recorded array operation on a :class:`Tape`."""

    __slots__ = ("tape", "value", "parents", "backward", "tag", "index")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape, value, parents=(), backward=None, tag="leaf"):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward = backward
        self.tag = tag
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __repr__(self):
        return f"Node({self.tag}, shape={self.shape})"

    def _new(self, value, parents, backward, tag):
        return Node(self.tape, value, parents, backward, tag)

    def _binary(self, other, value, grad_self, grad_other, tag):
        if isinstance(other, Node):
            sa, sb = self.shape, other.shape

            def back(g):
                return (_unbroadcast(grad_self(g), sa), _unbroadcast(grad_other(g), sb))

            return self._new(value, (self, other), back, tag)
        sa = self.shape
        return self._new(value, (self,), lambda g: (_unbroadcast(grad_self(g), sa),), tag)

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return self._binary(other, self.value + _value(other), lambda g: g, lambda g: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, self.value - _value(other), lambda g: g, lambda g: -g, "sub")

    def __rsub__(self, other):
        return self._new(other - self.value, (self,),
                         lambda g, s=self.shape: (_unbroadcast(-g, s),), "rsub")

    def __mul__(self, other):
        a, b = self.value, _value(other)
        return self._binary(other, a * b, lambda g: g * b, lambda g: g * a, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self.value, _value(other)
        return self._binary(other, a / b, lambda g: g / b, lambda g: -g * a / (b * b), "div")

    def __rtruediv__(self, other):
        b = self.value
        return self._new(other / b, (self,),
                         lambda g, s=self.shape: (_unbroadcast(-g * other / (b * b), s),), "rdiv")

    def __neg__(self):
        return self._new(-self.value, (self,), lambda g: (-g,), "neg")

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("Node ** only supports integer exponents")
        a = self.value
        return self._new(a ** n, (self,), lambda g: (g * n * a ** (n - 1),), "pow")

    def __matmul__(self, other):
        a, b = self.value, _value(other)
        return self._binary(other, a @ b,
                            lambda g: _matmul_grad_left(g, b),
                            lambda g: _matmul_grad_right(a, g), "matmul")

    def __rmatmul__(self, other):
        b = self.value
        return self._new(other @ b, (self,), lambda g: (_matmul_grad_right(other, g),), "matmul")

    # structure -----------------------------------------------------------
    @property
    def T(self):
        return self._new(self.value.T, (self,), lambda g: (g.T,), "transpose")

    def reshape(self, *shape):
        old = self.shape
        return self._new(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def __getitem__(self, idx):
        old = self.shape

        def back(g):
            out = np.zeros(old)
            out[idx] = g
            return (out,)

        return self._new(self.value[idx], (self,), back, "getitem")

    def sum(self, axis=None):
        old = self.shape
        if axis is None:
            return self._new(np.sum(self.value), (self,),
                             lambda g: (np.broadcast_to(g, old),), "sum")

        def back(g):
            return (np.broadcast_to(np.expand_dims(g, axis), old),)

        return self._new(np.sum(self.value, axis=axis), (self,), back, "sum")

    # elementwise functions ----------------------------------------------
    def exp(self):
        y = np.exp(self.value)
        return self._new(y, (self,), lambda g: (g * y,), "exp")

    def sin(self):
        a = self.value
        return self._new(np.sin(a), (self,), lambda g: (g * np.cos(a),), "sin")

    def cos(self):
        a = self.value
        return self._new(np.cos(a), (self,), lambda g: (-g * np.sin(a),), "cos")

    def tanh(self):
        y = np.tanh(self.value)
        return self._new(y, (self,), lambda g: (g * (1.0 - y * y),), "tanh")

    def sinh(self):
        a = self.value
        return self._new(np.sinh(a), (self,), lambda g: (g * np.cosh(a),), "sinh")

    def cosh(self):
        a = self.value
        return self._new(np.cosh(a), (self,), lambda g: (g * np.sinh(a),), "cosh")


def _matmul_grad_left(g, b):
    return g @ np.swapaxes(b, -1, -2)


def _matmul_grad_right(a, g):
    a = np.asarray(a)
    k = a.shape[-1]
    m = np.shape(g)[-1]
    return a.reshape(-1, k).T @ np.reshape(g, (-1, m))


class Tape:
    """Append-only record of array operations.

    Nodes are stored in creation order, which is a valid topological order,
    so the reverse sweep is a single pass over the list.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def variable(self, value, tag: str = "param") -> Node:
        return Node(self, np.asarray(value, dtype=float), (), None, tag)

    def backward(self, out: Node) -> list:
        """Reverse sweep seeded with ``d out / d out = 1``; returns per-node adjoints."""
        adj: list = [None] * len(self.nodes)
        adj[out.index] = np.ones_like(out.value, dtype=float)
        for node in reversed(self.nodes[: out.index + 1]):
            g = adj[node.index]
            if g is None or not node.parents:
                continue
            for parent, gp in zip(node.parents, node.backward(g)):
                if adj[parent.index] is None:
                    adj[parent.index] = gp
                else:
                    adj[parent.index] = adj[parent.index] + gp
        return adj

    def first_nonfinite(self) -> Node | None:
        for node in self.nodes:
            if not np.all(np.isfinite(node.value)):
                return node
        return None


# --------------------------------------------------------------------------
# coefficient algebra
# --------------------------------------------------------------------------


def _is_zero(c) -> bool:
    return isinstance(c, (int, float)) and c == 0


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return a + b


def _sub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return -b
    return a - b


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0.0
    return a * b


def _scale(s: float, c):
    if _is_zero(c) or s == 0:
        return 0.0
    if s == 1:
        return c
    return c * s


def _elem(name: str, c):
    if isinstance(c, Node):
        return getattr(c, name)()
    return getattr(np, name)(c)


def _conv(a: Sequence, b: Sequence, k: int):
    acc = 0.0
    for i in range(k + 1):
        acc = _add(acc, _mul(a[i], b[k - i]))
    return acc


def _rhs(u: Sequence, s: Sequence, k: int):
    # (1/k) * sum_{j=1..k} j u_j s_{k-j}; normalized form of y' = s u'
    acc = 0.0
    for j in range(1, k + 1):
        acc = _add(acc, _mul(_scale(float(j), u[j]), s[k - j]))
    return _scale(1.0 / k, acc)


# --------------------------------------------------------------------------
# jets
# --------------------------------------------------------------------------


class Jet:
    """Truncated Taylor expansion ``sum_k coeffs[k] * t**k`` of a traced value."""

    __slots__ = ("coeffs",)
    __array_ufunc__ = None

    def __init__(self, coeffs):
        self.coeffs = tuple(coeffs)
        if not self.coeffs:
            raise OrderError("a jet needs at least one coefficient")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self):
        return self.coeffs[0]

    def __repr__(self):
        return f"Jet(order={self.order}, coeffs={self.coeffs!r})"

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise OrderError(f"jet orders differ: {self.order} vs {other.order}")
            return other
        return Jet((other,) + (0.0,) * self.order)

    def map_linear(self, fn: Callable) -> "Jet":
        """Apply a linear map to every coefficient (structural zeros stay zero)."""
        return Jet(0.0 if _is_zero(c) else fn(c) for c in self.coeffs)

    def __getitem__(self, idx) -> "Jet":
        return self.map_linear(lambda c: c[idx])

    def __add__(self, other):
        o = self._lift(other)
        return Jet(_add(a, b) for a, b in zip(self.coeffs, o.coeffs))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Jet(_sub(a, b) for a, b in zip(self.coeffs, o.coeffs))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return self.map_linear(lambda c: -c)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(_mul(c, other) for c in self.coeffs)
        o = self._lift(other)
        return Jet(_conv(self.coeffs, o.coeffs, k) for k in range(self.order + 1))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            _check_divisor(other)
            return Jet(_mul(c, 1.0 / other) for c in self.coeffs)
        o = self._lift(other)
        b0 = o.coeffs[0]
        _check_divisor(b0)
        inv = 1.0 / b0
        out = []
        for k in range(self.order + 1):
            acc = self.coeffs[k]
            for j in range(1, k + 1):
                acc = _sub(acc, _mul(o.coeffs[j], out[k - j]))
            out.append(_mul(acc, inv))
        return Jet(out)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, n):
        return pow_int(self, n)


def _check_divisor(b0) -> None:
    if isinstance(b0, Node):
        b0 = b0.value
    if _is_zero(b0) or np.any(np.asarray(b0) == 0):
        raise SingularOperation("division by a jet with zero constant term")


def jet_const(c, order: int) -> Jet:
    """Lift a constant (scalar or array) to a jet with vanishing derivatives."""
    if order < 0:
        raise OrderError("order must be >= 0")
    return Jet((c,) + (0.0,) * order)


def jet_var(x0, order: int) -> Jet:
    """Seed an input variable: coefficients ``[x0, 1, 0, ...]``."""
    if order < 1:
        raise OrderError("a variable needs order >= 1 to carry a derivative direction")
    one = np.ones_like(x0, dtype=float) if np.ndim(x0) else 1.0
    return Jet((x0, one) + (0.0,) * (order - 1))


def directional_seeds(points: np.ndarray, order: int) -> list[Jet]:
    """Seed every coordinate axis at once.

    ``points`` has shape ``(n, d)``.  Returns ``d`` jets; coefficient 0 has
    shape ``(n,)`` and coefficient 1 has shape ``(d, n)``, leading axis being
    the derivative direction.  Broadcasting carries the direction axis
    through every rule, so derivatives come out with shape ``(d, n)`` and
    ``derivative(u, 2)[i]`` is the pure second derivative along axis ``i``.
    """
    points = np.asarray(points, dtype=float)
    if order < 1:
        raise OrderError("directional seeds need order >= 1")
    n, d = points.shape
    jets = []
    for i in range(d):
        seed = np.zeros((d, n))
        seed[i] = 1.0
        jets.append(Jet((points[:, i], seed) + (0.0,) * (order - 1)))
    return jets


def derivative(j: Jet, k: int):
    """``k!`` times the k-th normalized coefficient, i.e. the raw k-th derivative."""
    if k < 0 or k > j.order:
        raise OrderError(f"derivative order {k} exceeds jet order {j.order}")
    c = j.coeffs[k]
    base = j.coeffs[0]
    if not isinstance(c, Node) and np.ndim(c) == 0 and isinstance(base, np.ndarray):
        c = np.full(base.shape, float(c))
    return c * float(math.factorial(k)) if k > 1 else c


# elementary functions ------------------------------------------------------


def _as_jet(x) -> Jet:
    return x if isinstance(x, Jet) else Jet((x,))


def exp(x) -> Jet:
    u = _as_jet(x).coeffs
    y = [_elem("exp", u[0])]
    for k in range(1, len(u)):
        y.append(_rhs(u, y, k))
    return Jet(y)


def _sincos(u, s0, c0):
    s, c = [s0], [c0]
    for k in range(1, len(u)):
        sk = _rhs(u, c, k)
        ck = _scale(-1.0, _rhs(u, s, k))
        s.append(sk)
        c.append(ck)
    return Jet(s), Jet(c)


def sin(x) -> Jet:
    u = _as_jet(x).coeffs
    return _sincos(u, _elem("sin", u[0]), _elem("cos", u[0]))[0]


def cos(x) -> Jet:
    u = _as_jet(x).coeffs
    return _sincos(u, _elem("sin", u[0]), _elem("cos", u[0]))[1]


def _sinhcosh(u):
    s, c = [_elem("sinh", u[0])], [_elem("cosh", u[0])]
    for k in range(1, len(u)):
        sk = _rhs(u, c, k)
        ck = _rhs(u, s, k)
        s.append(sk)
        c.append(ck)
    return Jet(s), Jet(c)


def sinh(x) -> Jet:
    return _sinhcosh(_as_jet(x).coeffs)[0]


def cosh(x) -> Jet:
    return _sinhcosh(_as_jet(x).coeffs)[1]


def tanh(x) -> Jet:
    # co-propagate y = tanh(u) and s = sech^2(u) = 1 - y^2, with y' = s u'
    u = _as_jet(x).coeffs
    y0 = _elem("tanh", u[0])
    y = [y0]
    s = [_sub(1.0, _mul(y0, y0))]
    for k in range(1, len(u)):
        y.append(_rhs(u, s, k))
        s.append(_scale(-1.0, _conv(y, y, k)))
    return Jet(y)


def sigmoid(x) -> Jet:
    return 0.5 + 0.5 * tanh(_as_jet(x) * 0.5)


def pow_int(x: Jet, n) -> Jet:
    """Integer power by repeated squaring; negative powers go through division."""
    if isinstance(n, Jet):
        if n.order and any(not _is_zero(c) for c in n.coeffs[1:]):
            raise TypeError("pow_int needs a constant integer exponent")
        n = n.coeffs[0]
    if int(n) != n:
        raise TypeError("pow_int needs an integer exponent")
    n = int(n)
    x = _as_jet(x)
    if n < 0:
        return 1.0 / pow_int(x, -n)
    result = jet_const(1.0, x.order)
    base = x
    while n:
        if n & 1:
            result = result * base
        n >>= 1
        if n:
            base = base * base
    return result


# --------------------------------------------------------------------------
# parameter gradients
# --------------------------------------------------------------------------


def value_and_grad(program: Callable, params) -> tuple[float, np.ndarray]:
    """Evaluate ``program(params)`` on a fresh tape and sweep it backwards.

    ``program`` receives the parameter vector as a tape :class:`Node` and must
    return a scalar (a ``Node``, or a plain number if it ignores the input).
    """
    params = np.asarray(params, dtype=float)
    tape = Tape()
    p = tape.variable(params)
    out = program(p)
    if isinstance(out, Jet):
        out = out.coeffs[0]
    if not isinstance(out, Node):
        value = float(out)
        if not math.isfinite(value):
            raise NumericFault("loss is not finite", tag="output")
        return value, np.zeros_like(params)
    if np.ndim(out.value) != 0:
        raise ValueError(f"program must return a scalar, got shape {out.shape}")
    value = float(out.value)
    if not math.isfinite(value):
        bad = tape.first_nonfinite()
        tag = bad.tag if bad is not None else "output"
        raise NumericFault(f"non-finite value produced by '{tag}' node", tag=tag)
    adj = tape.backward(out)
    g = adj[p.index]
    g = np.zeros_like(params) if g is None else np.array(g, dtype=float)
    if not np.all(np.isfinite(g)):
        for node, a in zip(tape.nodes, adj):
            if a is not None and not np.all(np.isfinite(a)):
                raise NumericFault(f"non-finite adjoint at '{node.tag}' node", tag=node.tag)
    return value, g


def grad(program: Callable, params) -> np.ndarray:
    return value_and_grad(program, params)[1]


def gradcheck(program: Callable, params, fd_step: float = 1e-5) -> float:
    """Worst component-wise relative error of :func:`grad` against central differences.

    The finite-difference side calls ``program`` with plain arrays, so it never
    touches the tape.  Components where both estimates are below ``1e-8`` in
    magnitude are compared by absolute difference instead.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    params = np.asarray(params, dtype=float)
    g = grad(program, params)
    worst = 0.0
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = fd_step
        fp = float(_plain(program(params + e)))
        fm = float(_plain(program(params - e)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericFault(f"non-finite loss while differencing component {i}", tag="gradcheck")
        fd = (fp - fm) / (2.0 * fd_step)
        scale = max(abs(g[i]), abs(fd))
        err = abs(g[i] - fd) if scale < 1e-8 else abs(g[i] - fd) / scale
        worst = max(worst, err)
    return worst


def _plain(x):
    if isinstance(x, Jet):
        x = x.coeffs[0]
    return _value(x)
