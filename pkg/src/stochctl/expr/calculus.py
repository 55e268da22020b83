"""Exact differentiation and polynomial expansion."""

from __future__ import annotations

from fractions import Fraction
from itertools import product

from .core import (
    ONE,
    ZERO,
    Add,
    Call,
    Const,
    Exp,
    Expr,
    Log,
    Mul,
    Pow,
    UnregisteredDerivative,
    Var,
    add,
    mul,
)
from .primitives import get_primitive
from .simplify import simplify


def _derivative(e: Expr, index: int, memo: dict) -> Expr:
    if index not in e.variables():
        return ZERO
    key = id(e)
    if key in memo:
        return memo[key][1]
    if isinstance(e, Var):
        out = ONE
    elif isinstance(e, Add):
        out = add(*(_derivative(t, index, memo) for t in e.terms))
    elif isinstance(e, Mul):
        terms = []
        fs = e.factors
        for j, f in enumerate(fs):
            df = _derivative(f, index, memo)
            if isinstance(df, Const) and df.value == 0:
                continue
            terms.append(mul(*fs[:j], df, *fs[j + 1 :]))
        out = add(*terms)
    elif isinstance(e, Pow):
        q = e.exponent
        db = _derivative(e.base, index, memo)
        lower = ONE if q == 1 else Pow(e.base, q - 1, e.guard and (q - 1).denominator != 1)
        out = mul(Const(q), lower, db)
    elif isinstance(e, Exp):
        out = mul(e, _derivative(e.arg, index, memo))
    elif isinstance(e, Log):
        out = mul(Pow(e.arg, -1), _derivative(e.arg, index, memo))
    elif isinstance(e, Call):
        rule = get_primitive(e.name).derivative
        if rule is None:
            raise UnregisteredDerivative(e.name)
        out = mul(rule(e.arg), _derivative(e.arg, index, memo))
    else:
        raise TypeError(f"unknown node {type(e).__name__}")
    memo[key] = (e, out)  # keep e alive so id() stays unique
    return out


def differentiate(e: Expr, var, *, simplified: bool = True) -> Expr:
    """Partial derivative of ``e`` with respect to ``var`` (a Var or an index)."""
    index = var.index if isinstance(var, Var) else int(var)
    out = _derivative(e, index, {})
    return simplify(out) if simplified else out


def gradient(e: Expr, n: int) -> tuple[Expr, ...]:
    return tuple(differentiate(e, i) for i in range(n))


class ExpansionTooLarge(ValueError):
    pass


def _terms(e: Expr) -> tuple[Expr, ...]:
    return e.terms if isinstance(e, Add) else (e,)


def expand(e: Expr, max_terms: int = 200_000) -> Expr:
    """Distribute products over sums and expand small positive integer powers
    of sums, then simplify. Raises :class:`ExpansionTooLarge` past ``max_terms``.
    """
    memo: dict[int, Expr] = {}

    def go(node: Expr) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, (Const, Var)):
            out = node
        elif isinstance(node, Add):
            out = simplify(Add([go(t) for t in node.terms]))
        elif isinstance(node, Mul):
            parts = [_terms(go(f)) for f in node.factors]
            size = 1
            for p in parts:
                size *= len(p)
            if size > max_terms:
                raise ExpansionTooLarge(f"expansion would produce {size} terms")
            out = simplify(Add([Mul(combo) for combo in product(*parts)]))
        elif isinstance(node, Pow):
            base = go(node.base)
            q = node.exponent
            if isinstance(base, Add) and q.denominator == 1 and 1 < q <= 8:
                out = go(Mul([base] * int(q)))
            else:
                out = simplify(Pow(base, q, node.guard))
        else:
            from .core import rebuild

            out = simplify(rebuild(node, [go(c) for c in node.children]))
        memo[key] = out
        return out

    return simplify(go(e))


def is_polynomial(e: Expr) -> bool:
    """True when ``e`` is a sum of constant multiples of variable monomials."""
    for t in _terms(e):
        fs = t.factors if isinstance(t, Mul) else (t,)
        for f in fs:
            if isinstance(f, (Const, Var)):
                continue
            if isinstance(f, Pow) and isinstance(f.base, Var) and f.exponent.denominator == 1 and f.exponent > 0:
                continue
            return False
    return True


def monomials(e: Expr) -> list[tuple[float, dict[int, int]]]:
    """Decompose a polynomial into ``(coefficient, {var: power})`` pairs."""
    out = []
    for t in _terms(e):
        c = 1.0
        powers: dict[int, int] = {}
        for f in t.factors if isinstance(t, Mul) else (t,):
            if isinstance(f, Const):
                c *= float(f.value)
            elif isinstance(f, Var):
                powers[f.index] = powers.get(f.index, 0) + 1
            elif isinstance(f, Pow) and isinstance(f.base, Var):
                powers[f.base.index] = powers.get(f.base.index, 0) + int(f.exponent)
            else:
                raise ValueError(f"not a polynomial term: {t}")
        if c != 0.0:
            out.append((c, powers))
    return out


def polynomial_from_monomials(terms, variables) -> Expr:
    """Build a simplified polynomial from ``(coefficient, {var: power})`` pairs."""
    parts = []
    for c, powers in terms:
        fs = [Const(c)]
        for i, p in sorted(powers.items()):
            v = variables[i]
            fs.append(v if p == 1 else Pow(v, Fraction(p)))
        parts.append(Mul(fs) if len(fs) > 1 else fs[0])
    return simplify(Add(parts)) if parts else ZERO
