"""Immutable expression trees over indexed real variables.

Node set: ``Const``, ``Var``, ``Add``, ``Mul``, ``Pow``, ``Exp``, ``Log`` and
``Call`` (an application of a registered opaque primitive). Negation is
``Mul`` with a ``-1`` coefficient and ``sqrt(e)`` is ``Pow(e, 1/2)``; rational
powers carry a positivity guard so that domain violations surface as
:class:`DomainError` rather than NaNs.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

Number = Union[Fraction, float]


class ExprError(Exception):
    """Base class for expression errors."""


class DomainError(ExprError, ValueError):
    """Raised when an expression is evaluated outside its domain."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message}: {subexpr}")
        self.subexpr = subexpr


class UnregisteredDerivative(ExprError):
    """A primitive without a derivative rule was differentiated."""

    def __init__(self, name: str):
        super().__init__(f"primitive {name!r} has no registered derivative rule")
        self.name = name


def as_number(value) -> Number:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return float(value)


def _is_int(q: Number) -> bool:
    return isinstance(q, Fraction) and q.denominator == 1


class Expr:
    """Base node. Subclasses are immutable; structural equality and hashing."""

    __slots__ = ("_hash", "_vars", "_text")

    def _fields(self) -> tuple:
        raise NotImplementedError

    def _init(self) -> None:
        self._hash = None
        self._vars = None
        self._text = None

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((type(self).__name__, self._fields()))
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._fields() == other._fields()

    def __ne__(self, other) -> bool:
        return not self == other

    @property
    def children(self) -> tuple["Expr", ...]:
        return ()

    def variables(self) -> frozenset[int]:
        """Indices of the variables this expression depends on."""
        if self._vars is None:
            acc: set[int] = set()
            for c in self.children:
                acc |= c.variables()
            self._vars = frozenset(acc)
        return self._vars

    def __str__(self) -> str:
        if self._text is None:
            from .printer import to_text

            self._text = to_text(self)
        return self._text

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self})"

    # arithmetic sugar; results are unsimplified trees
    def __add__(self, other):
        return add(self, wrap(other))

    def __radd__(self, other):
        return add(wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(wrap(other)))

    def __rsub__(self, other):
        return add(wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, wrap(other))

    def __rmul__(self, other):
        return mul(wrap(other), self)

    def __truediv__(self, other):
        return mul(self, power(wrap(other), -1))

    def __rtruediv__(self, other):
        return mul(wrap(other), power(self, -1))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __neg__(self):
        return neg(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self._init()
        self.value = as_number(value)

    def _fields(self):
        return (self.value,)

    def variables(self):
        return frozenset()


class Var(Expr):
    __slots__ = ("index", "name")

    def __init__(self, index: int, name: str | None = None):
        self._init()
        if index < 0:
            raise ValueError("variable index must be non-negative")
        self.index = int(index)
        self.name = name if name is not None else f"z{index}"

    def _fields(self):
        return (self.index,)

    def variables(self):
        return frozenset((self.index,))


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Expr]):
        self._init()
        self.terms = tuple(terms)

    def _fields(self):
        return self.terms

    @property
    def children(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: Iterable[Expr]):
        self._init()
        self.factors = tuple(factors)

    def _fields(self):
        return self.factors

    @property
    def children(self):
        return self.factors


class Pow(Expr):
    """``base ** exponent`` with a rational exponent.

    ``guard`` is set whenever the exponent is not an integer: the base must
    then be non-negative (strictly positive for negative exponents).
    """

    __slots__ = ("base", "exponent", "guard")

    def __init__(self, base: Expr, exponent, guard: bool | None = None):
        self._init()
        q = as_number(exponent)
        if not isinstance(q, Fraction):
            q = Fraction(q).limit_denominator(10**6)
        self.base = base
        self.exponent = q
        self.guard = (q.denominator != 1) if guard is None else bool(guard)

    def _fields(self):
        return (self.base, self.exponent, self.guard)

    @property
    def children(self):
        return (self.base,)


class Exp(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        self._init()
        self.arg = arg

    def _fields(self):
        return (self.arg,)

    @property
    def children(self):
        return (self.arg,)


class Log(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        self._init()
        self.arg = arg

    def _fields(self):
        return (self.arg,)

    @property
    def children(self):
        return (self.arg,)


class Call(Expr):
    """Application of a registered opaque primitive, referenced by name."""

    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        self._init()
        self.name = name
        self.arg = arg

    def _fields(self):
        return (self.name, self.arg)

    @property
    def children(self):
        return (self.arg,)


ZERO = Const(0)
ONE = Const(1)


def wrap(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(value)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0


def is_one(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 1


# Light-weight constructors: fold the trivial identities only.


def add(*terms: Expr) -> Expr:
    kept = [t for t in terms if not is_zero(t)]
    if not kept:
        return ZERO
    if len(kept) == 1:
        return kept[0]
    return Add(kept)


def mul(*factors: Expr) -> Expr:
    if any(is_zero(f) for f in factors):
        return ZERO
    kept = [f for f in factors if not is_one(f)]
    if not kept:
        return ONE
    if len(kept) == 1:
        return kept[0]
    return Mul(kept)


def neg(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(-e.value)
    return mul(Const(-1), e)


def power(base: Expr, exponent) -> Expr:
    q = as_number(exponent)
    if q == 0:
        return ONE
    if q == 1:
        return base
    return Pow(base, q)


def sqrt(e) -> Expr:
    return Pow(wrap(e), Fraction(1, 2))


def exp(e) -> Expr:
    return Exp(wrap(e))


def log(e) -> Expr:
    return Log(wrap(e))


def call(name: str, e) -> Expr:
    from .primitives import get_primitive

    get_primitive(name)  # fail early on unknown names
    return Call(name, wrap(e))


def variables(names: Sequence[str]) -> tuple[Var, ...]:
    return tuple(Var(i, n) for i, n in enumerate(names))


def walk(e: Expr):
    """Post-order traversal yielding each distinct node once."""
    seen: set[int] = set()
    stack = [(e, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            yield node
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.children):
            stack.append((c, False))


def rebuild(e: Expr, children: Sequence[Expr]) -> Expr:
    """Return a node of the same kind as ``e`` with new children."""
    if isinstance(e, Add):
        return Add(children)
    if isinstance(e, Mul):
        return Mul(children)
    if isinstance(e, Pow):
        return Pow(children[0], e.exponent, e.guard)
    if isinstance(e, Exp):
        return Exp(children[0])
    if isinstance(e, Log):
        return Log(children[0])
    if isinstance(e, Call):
        return Call(e.name, children[0])
    return e


def substitute(e: Expr, mapping: dict[int, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    memo: dict[int, Expr] = {}

    def go(node: Expr) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            out = mapping.get(node.index, node)
        elif isinstance(node, Const) or not (node.variables() & mapping.keys()):
            out = node
        else:
            out = rebuild(node, [go(c) for c in node.children])
        memo[key] = out
        return out

    return go(e)


def node_count(e: Expr) -> int:
    return sum(1 for _ in walk(e))


def evaluate(e: Expr, point: Sequence[float]) -> float:
    """Tree-walk evaluation in float64 with explicit domain checks."""
    from .primitives import get_primitive

    point = [float(v) for v in point]
    memo: dict[int, float] = {}

    def go(node: Expr) -> float:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Const):
            out = float(node.value)
        elif isinstance(node, Var):
            if node.index >= len(point):
                raise IndexError(f"variable {node.name} (index {node.index}) out of range")
            out = point[node.index]
        elif isinstance(node, Add):
            out = 0.0
            for t in node.terms:
                out += go(t)
        elif isinstance(node, Mul):
            out = 1.0
            for f in node.factors:
                out *= go(f)
        elif isinstance(node, Pow):
            b = go(node.base)
            q = node.exponent
            if node.guard and b < 0:
                raise DomainError("negative base under rational power", node)
            if b == 0 and q < 0:
                raise DomainError("division by zero", node)
            if q == Fraction(1, 2):
                out = math.sqrt(b)
            elif q.denominator == 1:
                out = b ** int(q)
            else:
                out = b ** float(q)
        elif isinstance(node, Exp):
            a = go(node.arg)
            out = math.exp(a) if a < 709.0 else math.inf
        elif isinstance(node, Log):
            a = go(node.arg)
            if a <= 0:
                raise DomainError("non-positive argument of log", node)
            out = math.log(a)
        elif isinstance(node, Call):
            out = float(get_primitive(node.name).scalar(go(node.arg)))
        else:
            raise TypeError(f"unknown node {type(node).__name__}")
        memo[key] = out
        return out

    return go(e)
