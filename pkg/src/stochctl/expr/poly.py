"""Sparse multivariate polynomials, used as a fast path for brackets of
polynomial vector fields.

A polynomial is a dict mapping a monomial (sorted tuple of ``(var, power)``
pairs) to its coefficient. Coefficients keep their type, so integer and
rational inputs stay exact.
"""

from __future__ import annotations

from fractions import Fraction

from .calculus import _terms, is_polynomial
from .core import ZERO, Add, Const, Expr, Mul, Pow, Var

Monomial = tuple[tuple[int, int], ...]
Poly = dict[Monomial, object]


def to_poly(e: Expr) -> Poly | None:
    """Sparse form of ``e``, or None when ``e`` is not a polynomial."""
    if not is_polynomial(e):
        return None
    out: Poly = {}
    for t in _terms(e):
        c = Fraction(1)
        powers: dict[int, int] = {}
        for f in t.factors if isinstance(t, Mul) else (t,):
            if isinstance(f, Const):
                c = c * f.value
            elif isinstance(f, Var):
                powers[f.index] = powers.get(f.index, 0) + 1
            else:
                powers[f.base.index] = powers.get(f.base.index, 0) + int(f.exponent)
        key = tuple(sorted(powers.items()))
        out[key] = out.get(key, 0) + c
    return {k: v for k, v in out.items() if v != 0}


def diff(p: Poly, var: int) -> Poly:
    out: Poly = {}
    for mono, c in p.items():
        for k, (v, n) in enumerate(mono):
            if v == var:
                rest = mono[:k] + ((v, n - 1),) + mono[k + 1 :] if n > 1 else mono[:k] + mono[k + 1 :]
                out[rest] = out.get(rest, 0) + c * n
                break
    return out


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for v, n in b:
        d[v] = d.get(v, 0) + n
    return tuple(sorted(d.items()))


def mul_acc(out: Poly, a: Poly, b: Poly, sign=1) -> None:
    """``out += sign * a * b`` in place."""
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = _mono_mul(ma, mb)
            out[m] = out.get(m, 0) + sign * ca * cb


def variables_of(p: Poly) -> set[int]:
    return {v for mono in p for v, _ in mono}


def prune(p: Poly, rel: float = 0.0, scale: float | None = None) -> Poly:
    """Drop zero coefficients and, for ``rel > 0``, float ones below ``rel * scale``."""
    if scale is None:
        scale = max((abs(float(c)) for c in p.values()), default=0.0)
    cut = rel * scale
    return {m: c for m, c in p.items() if c != 0 and not (isinstance(c, float) and abs(c) <= cut)}


def from_poly(p: Poly, names: dict[int, Var]) -> Expr:
    """Expression for ``p`` with terms in sorted monomial order (no simplification pass)."""
    if not p:
        return ZERO
    parts = []
    for mono in sorted(p, key=lambda m: (sum(n for _, n in m), m)):
        c = p[mono]
        fs = [] if c == 1 and mono else [Const(c)]
        for v, n in mono:
            var = names.get(v) or Var(v, f"z{v}")
            fs.append(var if n == 1 else Pow(var, Fraction(n)))
        parts.append(Mul(fs) if len(fs) > 1 else fs[0])
    return Add(parts) if len(parts) > 1 else parts[0]
