"""Infix rendering compatible with :mod:`stochctl.expr.parser`."""

from __future__ import annotations

from fractions import Fraction

from .core import Add, Call, Const, Exp, Expr, Log, Mul, Pow, Var

_ADD, _MUL, _POW, _ATOM = 1, 2, 4, 5


def format_number(v) -> str:
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        return f"({v.numerator}/{v.denominator})"
    return repr(float(v))


def _negative(c: Const) -> bool:
    return c.value < 0


def _split_sign(e: Expr) -> tuple[bool, Expr]:
    """Return (is_negative, magnitude) for a term printed inside a sum."""
    if isinstance(e, Const) and _negative(e):
        return True, Const(-e.value)
    if isinstance(e, Mul) and e.factors and isinstance(e.factors[0], Const) and _negative(e.factors[0]):
        c = -e.factors[0].value
        rest = e.factors[1:]
        if c == 1:
            return True, rest[0] if len(rest) == 1 else Mul(rest)
        return True, Mul((Const(c),) + rest)
    return False, e


def _go(e: Expr, ctx: int) -> str:
    if isinstance(e, Const):
        s = format_number(e.value)
        if _negative(e) and ctx > _ADD and not s.startswith("("):
            return f"({s})"
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        parts = [_go(e.terms[0], _ADD)]
        for t in e.terms[1:]:
            negative, mag = _split_sign(t)
            parts.append((" - " if negative else " + ") + _go(mag, _MUL if negative else _ADD))
        s = "".join(parts)
        return f"({s})" if ctx > _ADD else s
    if isinstance(e, Mul):
        factors = list(e.factors)
        lead = ""
        if factors and isinstance(factors[0], Const) and len(factors) > 1:
            c = factors.pop(0).value
            if c == -1:
                lead = "-"
            else:
                lead = _go(Const(c), _MUL) + "*"
        s = lead + "*".join(_go(f, _POW) for f in factors)
        if ctx > _MUL or (lead == "-" and ctx > _ADD):
            return f"({s})"
        return s
    if isinstance(e, Pow):
        q = e.exponent
        if q == Fraction(1, 2):
            s = f"sqrt({_go(e.base, 0)})"
            return s
        if q.denominator == 2:
            s = f"sqrt({_go(e.base, 0)})^{q.numerator}"
        elif q.denominator == 1:
            s = f"{_go(e.base, _ATOM)}^{q.numerator}"
        else:
            s = f"{_go(e.base, _ATOM)}^({q.numerator}/{q.denominator})"
        return f"({s})" if ctx > _POW else s
    if isinstance(e, Exp):
        return f"exp({_go(e.arg, 0)})"
    if isinstance(e, Log):
        return f"log({_go(e.arg, 0)})"
    if isinstance(e, Call):
        return f"{e.name}({_go(e.arg, 0)})"
    raise TypeError(f"cannot print {type(e).__name__}")


def to_text(e: Expr) -> str:
    return _go(e, 0)
