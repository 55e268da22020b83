"""Registry of opaque scalar primitives.

Shipped defaults:

``gsat(x) = x / sqrt(1 + x^2)``
    odd, strictly increasing (derivative ``(1 + x^2)^(-3/2)``), range (-1, 1).
``bump(y)``
    smooth, 0 for ``|y| <= 2`` and 1 for ``|y| >= 3``; built from the
    ``exp(-1/t)`` mollifier as ``S(y - 2) + S(-y - 2)`` with the smooth step
    ``S(t) = m(t) / (m(t) + m(1 - t))``.
``mollif``, ``mollif_d1``, ``mollif_d2``, ...
    ``m(t) = exp(-1/t)`` for ``t > 0`` and 0 otherwise, and its derivatives
    ``m^(n)(t) = P_n(1/t) m(t)`` with ``P_{n+1}(s) = s^2 (P_n(s) - P_n'(s))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P

from .core import Call, Const, Expr, Pow, Var, add, mul, neg, substitute


@dataclass(frozen=True)
class Primitive:
    """An opaque arity-1 function.

    Attributes:
        name: identifier used in expressions and model files.
        scalar: float -> float evaluation.
        vector: ndarray -> ndarray evaluation (elementwise).
        derivative: maps the argument expression ``a`` to ``p'(a)``; ``None``
            means differentiation is refused.
        bounds: optional closed interval containing the range.
        increasing: whether the function is non-decreasing (used by interval
            queries).
    """

    name: str
    scalar: Callable[[float], float]
    vector: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[Expr], Expr] | None = None
    bounds: tuple[float, float] | None = None
    increasing: bool = False


_REGISTRY: dict[str, Primitive] = {}
_MOLLIF_RE = re.compile(r"^mollif(?:_d(\d+))?$")


def register_primitive(p: Primitive, *, replace: bool = False) -> Primitive:
    if p.name in _REGISTRY and not replace:
        raise ValueError(f"primitive {p.name!r} already registered")
    if not re.match(r"^[A-Za-z_][A-Za-z_0-9]*$", p.name):
        raise ValueError(f"invalid primitive name {p.name!r}")
    _REGISTRY[p.name] = p
    return p


def get_primitive(name: str) -> Primitive:
    if name not in _REGISTRY:
        m = _MOLLIF_RE.match(name)
        if m:
            return _mollifier(int(m.group(1) or 0))
        raise KeyError(f"unknown primitive {name!r}")
    return _REGISTRY[name]


def primitive_names() -> list[str]:
    return sorted(_REGISTRY)


# -- saturating odd function ---------------------------------------------------


def _gsat_scalar(x: float) -> float:
    return x / math.sqrt(1.0 + x * x)


def _gsat_vector(x):
    return x / np.sqrt(1.0 + x * x)


def _gsat_derivative(a: Expr) -> Expr:
    return Pow(add(Const(1), Pow(a, 2)), Fraction(-3, 2))


register_primitive(
    Primitive("gsat", _gsat_scalar, _gsat_vector, _gsat_derivative, (-1.0, 1.0), True)
)


# -- mollifier family ----------------------------------------------------------


@lru_cache(maxsize=None)
def _mollif_poly(n: int) -> np.ndarray:
    c = np.array([1.0])
    for _ in range(n):
        c = P.polymulx(P.polymulx(P.polysub(c, P.polyder(c))))
    return c


def _mollif_scalar(n: int, t: float) -> float:
    if t <= 0.0:
        return 0.0
    s = 1.0 / t
    e = math.exp(-s)
    if e == 0.0:
        return 0.0
    return float(P.polyval(s, _mollif_poly(n))) * e


def _mollif_vector(n: int, t):
    t = np.asarray(t, dtype=float)
    pos = t > 0.0
    s = 1.0 / np.where(pos, t, 1.0)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        val = P.polyval(s, _mollif_poly(n)) * np.exp(-s)
        val = np.where(np.isfinite(val), val, 0.0)
    return np.where(pos, val, 0.0)


def _mollif_name(n: int) -> str:
    return "mollif" if n == 0 else f"mollif_d{n}"


def _mollifier(n: int) -> Primitive:
    name = _mollif_name(n)
    if name in _REGISTRY:
        return _REGISTRY[name]
    return register_primitive(
        Primitive(
            name,
            lambda t, n=n: _mollif_scalar(n, t),
            lambda t, n=n: _mollif_vector(n, t),
            lambda a, n=n: Call(_mollif_name(n + 1), a),
            (0.0, 1.0) if n == 0 else None,
            n == 0,
        )
    )


_mollifier(0)


def smooth_step(t: Expr) -> Expr:
    """``m(t) / (m(t) + m(1 - t))``: 0 for t <= 0, 1 for t >= 1, C-infinity."""
    a = Call("mollif", t)
    b = Call("mollif", add(Const(1), neg(t)))
    return mul(a, Pow(add(a, b), -1))


def bump_expansion(y: Expr) -> Expr:
    """The default bump written in terms of the mollifier primitive."""
    return add(
        smooth_step(add(y, Const(-2))),
        smooth_step(add(neg(y), Const(-2))),
    )


def _step_scalar(t: float) -> float:
    a = _mollif_scalar(0, t)
    b = _mollif_scalar(0, 1.0 - t)
    return a / (a + b)


def _bump_scalar(y: float) -> float:
    return _step_scalar(y - 2.0) + _step_scalar(-y - 2.0)


def _bump_vector(y):
    y = np.asarray(y, dtype=float)

    def step(t):
        a = _mollif_vector(0, t)
        b = _mollif_vector(0, 1.0 - t)
        return a / (a + b)

    return step(y - 2.0) + step(-y - 2.0)


@lru_cache(maxsize=1)
def _bump_derivative_template() -> Expr:
    from .calculus import differentiate

    return differentiate(bump_expansion(Var(0, "s")), 0)


def _bump_derivative(a: Expr) -> Expr:
    return substitute(_bump_derivative_template(), {0: a})


register_primitive(Primitive("bump", _bump_scalar, _bump_vector, _bump_derivative, (0.0, 1.0)))


def gsat(e) -> Expr:
    from .core import wrap

    return Call("gsat", wrap(e))


def bump(e) -> Expr:
    from .core import wrap

    return Call("bump", wrap(e))
