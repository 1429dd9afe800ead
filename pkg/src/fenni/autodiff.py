"""Reverse-mode automatic differentiation on an append-only tape.

Every recorded node holds an ndarray value (scalars are 0-d arrays) together
with one vector-Jacobian product per parent.  Element loops are expressed as
array operations, so a whole loss evaluation is a few dozen tape nodes.

The module-level functions (:func:`exp`, :func:`relu`, :func:`where`, ...)
accept either :class:`Var` or plain arrays; code written against them runs
unchanged with or without a tape, which is how models are evaluated after
training.

Example
-------
>>> tape = Tape()
>>> x, y = tape.var(3.0), tape.var(4.0)
>>> grads = tape.backward(x * y)
>>> float(grads[x]), float(grads[y])
(4.0, 3.0)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteGradient, NonFiniteValue

__all__ = [
    "Tape",
    "Var",
    "absolute",
    "exp",
    "log",
    "matmul",
    "maximum",
    "minimum",
    "relu",
    "scatter_add",
    "sqrt",
    "sum",
    "value_of",
    "where",
]

_builtin_sum = sum


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Append-only record of operations; parents always precede children."""

    def __init__(self) -> None:
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[tuple[Callable, ...]] = []
        self._leaves: list[Var] = []

    def __len__(self) -> int:
        return len(self._parents)

    def var(self, value, requires_grad: bool = True) -> "Var":
        """Create a leaf variable."""
        value = np.array(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteValue("leaf value is not finite")
        v = Var(self, len(self._parents), value, requires_grad)
        self._parents.append(())
        self._vjps.append(())
        self._leaves.append(v)
        return v

    def record(self, op: str, parents: Sequence["Var"], value, partials: Sequence[Callable]) -> "Var":
        """Append a node computed eagerly from ``parents``.

        ``partials[i]`` maps the output cotangent to the cotangent of
        ``parents[i]`` (a vector-Jacobian product).  Parents that do not
        require gradients are dropped from the record.
        """
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteValue(f"non-finite value produced by '{op}'")
        keep = [(p, f) for p, f in zip(parents, partials) if p.requires_grad]
        for p, _ in keep:
            if p.tape is not self:
                raise ValueError("parents must live on the same tape")
        v = Var(self, len(self._parents), value, bool(keep))
        self._parents.append(tuple(p.tape_index for p, _ in keep))
        self._vjps.append(tuple(f for _, f in keep))
        return v

    def backward(self, output: "Var") -> dict:
        """Return ``{leaf: d output / d leaf}`` for every leaf requiring grad.

        The cotangent buffer is local to the call, so repeated calls do not
        accumulate into each other.
        """
        if output.tape is not self:
            raise ValueError("output does not belong to this tape")
        if output.value.size != 1:
            raise ValueError("backward needs a scalar output")
        grads: list = [None] * len(self._parents)
        grads[output.tape_index] = np.ones_like(output.value)
        for i in range(output.tape_index, -1, -1):
            g = grads[i]
            parents = self._parents[i]
            if g is None or not parents:
                continue
            for p, vjp in zip(parents, self._vjps[i]):
                c = vjp(g)
                grads[p] = c if grads[p] is None else grads[p] + c
            grads[i] = None
        out = {}
        for leaf in self._leaves:
            if not leaf.requires_grad:
                continue
            g = grads[leaf.tape_index]
            g = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=float).reshape(leaf.shape)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for leaf {leaf.tape_index}")
            out[leaf] = g
        return out


class Var:
    """A value recorded on a :class:`Tape`."""

    __array_ufunc__ = None  # make ndarray defer to the reflected operators

    __slots__ = ("tape", "tape_index", "value", "requires_grad")

    def __init__(self, tape: Tape, tape_index: int, value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.tape_index = tape_index
        self.value = value
        self.requires_grad = requires_grad

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, index={self.tape_index}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __float__(self) -> float:
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -other if not isinstance(other, Var) else _neg(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __pow__(self, p):
        return _pow(self, p)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None):
        return sum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.shape
        return self.tape.record("reshape", [self], self.value.reshape(shape), [lambda g: g.reshape(old)])


def value_of(x) -> np.ndarray:
    """Plain ndarray behind ``x`` (identity for arrays and numbers)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _binary(op, a, b, value, da, db):
    """Record ``value`` depending on whichever of ``a``/``b`` are Vars."""
    tape = _tape_of(a, b)
    parents, partials = [], []
    if isinstance(a, Var):
        sa = a.shape
        parents.append(a)
        partials.append(lambda g: _unbroadcast(da(g), sa))
    if isinstance(b, Var):
        sb = b.shape
        parents.append(b)
        partials.append(lambda g: _unbroadcast(db(g), sb))
    return tape.record(op, parents, value, partials)


def _add(a, b):
    if not isinstance(b, Var) and not isinstance(a, Var):
        return np.add(a, b)
    return _binary("add", a, b, value_of(a) + value_of(b), lambda g: g, lambda g: g)


def _neg(a):
    return a.tape.record("neg", [a], -a.value, [lambda g: -g])


def _mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _binary("mul", a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def _div(a, b):
    av, bv = value_of(a), value_of(b)
    if np.any(bv == 0.0):
        raise NonFiniteValue("division by zero")
    if not isinstance(a, Var) and not isinstance(b, Var):
        return av / bv
    out = av / bv
    return _binary("div", a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def _pow(a, p):
    if isinstance(p, Var):
        raise TypeError("only constant exponents are supported")
    av = a.value
    p = float(p)
    if p == 2.0:
        return a.tape.record("pow", [a], av * av, [lambda g: 2.0 * g * av])
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out = av**p
        except FloatingPointError as exc:
            raise NonFiniteValue("pow outside its domain") from exc
    return a.tape.record("pow", [a], out, [lambda g: g * p * av ** (p - 1.0)])


def _getitem(a, idx):
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return a.tape.record("getitem", [a], a.value[idx], [vjp])


# polymorphic functions -----------------------------------------------------
def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    out = np.exp(x.value)
    return x.tape.record("exp", [x], out, [lambda g: g * out])


def log(x):
    if not isinstance(x, Var):
        return np.log(x)
    if np.any(x.value <= 0.0):
        raise NonFiniteValue("log of a non-positive value")
    xv = x.value
    return x.tape.record("log", [x], np.log(xv), [lambda g: g / xv])


def sqrt(x):
    if not isinstance(x, Var):
        return np.sqrt(x)
    if np.any(x.value < 0.0):
        raise NonFiniteValue("sqrt of a negative value")
    out = np.sqrt(x.value)
    return x.tape.record("sqrt", [x], out, [lambda g: g * 0.5 / out])


def relu(x):
    """max(0, x); the derivative at 0 is taken as 0."""
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    mask = x.value > 0.0
    return x.tape.record("relu", [x], np.where(mask, x.value, 0.0), [lambda g: g * mask])


def absolute(x):
    """|x|; the derivative at 0 is taken as 0."""
    if not isinstance(x, Var):
        return np.abs(x)
    s = np.sign(x.value)
    return x.tape.record("abs", [x], np.abs(x.value), [lambda g: g * s])


def maximum(a, b):
    """Element-wise max; ties send the cotangent to ``a``."""
    av, bv = value_of(a), value_of(b)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.maximum(av, bv)
    pick_a = av >= bv
    return _binary("max", a, b, np.where(pick_a, av, bv), lambda g: g * pick_a, lambda g: g * ~pick_a)


def minimum(a, b):
    """Element-wise min; ties send the cotangent to ``a``."""
    av, bv = value_of(a), value_of(b)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.minimum(av, bv)
    pick_a = av <= bv
    return _binary("min", a, b, np.where(pick_a, av, bv), lambda g: g * pick_a, lambda g: g * ~pick_a)


def where(cond, a, b):
    """Select with a constant boolean mask (no comparison is recorded)."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.where(cond, av, bv)
    return _binary("select", a, b, np.where(cond, av, bv), lambda g: g * cond, lambda g: g * ~cond)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    shape = x.shape
    if axis is None:
        return x.tape.record("sum", [x], np.sum(x.value), [lambda g: np.broadcast_to(g, shape).copy()])
    axis = axis % x.ndim

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return x.tape.record("sum", [x], np.sum(x.value, axis=axis), [vjp])


def matmul(a, b):
    """Matrix product of 2-d operands (either may be constant)."""
    av, bv = value_of(a), value_of(b)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return av @ bv
    return _binary("matmul", a, b, av @ bv, lambda g: g @ bv.T, lambda g: av.T @ g)


def scatter_add(values, index, n: int):
    """``out[index[i, ...]] += values[i, ...]`` into a zero array of length ``n``."""
    index = np.asarray(index)
    vv = value_of(values)
    out = np.zeros((n,) + vv.shape[index.ndim:])
    np.add.at(out, index, vv)
    if not isinstance(values, Var):
        return out
    return values.tape.record("scatter_add", [values], out, [lambda g: g[index]])
