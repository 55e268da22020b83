"""Naive interval enclosures of expressions over a box."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .core import Add, Call, Const, Exp, Expr, Log, Mul, Pow, Var
from .primitives import get_primitive


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __add__(self, o: "Interval") -> "Interval":
        return Interval(self.lo + o.lo, self.hi + o.hi)

    def __mul__(self, o: "Interval") -> "Interval":
        ps = [a * b for a in (self.lo, self.hi) for b in (o.lo, o.hi) if not (math.isinf(a) and b == 0 or math.isinf(b) and a == 0)]
        ps = ps or [0.0]
        return Interval(min(ps), max(ps))

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


_ALL = Interval(-math.inf, math.inf)


def bounds(e: Expr, box: Mapping[int, tuple[float, float]]) -> Interval:
    """Interval enclosure of ``e`` when each variable ranges over ``box``.

    Variables missing from ``box`` are unbounded. Primitive calls use the
    primitive's declared range, tightened by monotonicity when declared.
    """
    if isinstance(e, Const):
        v = float(e.value)
        return Interval(v, v)
    if isinstance(e, Var):
        lo, hi = box.get(e.index, (-math.inf, math.inf))
        return Interval(float(lo), float(hi))
    if isinstance(e, Add):
        out = Interval(0.0, 0.0)
        for t in e.terms:
            out = out + bounds(t, box)
        return out
    if isinstance(e, Mul):
        out = Interval(1.0, 1.0)
        for f in e.factors:
            out = out * bounds(f, box)
        return out
    if isinstance(e, Pow):
        b = bounds(e.base, box)
        q = float(e.exponent)
        if e.exponent.denominator == 1 and q > 0 and int(q) % 2 == 0:
            lo = 0.0 if b.lo <= 0 <= b.hi else min(abs(b.lo), abs(b.hi)) ** q
            return Interval(lo, max(abs(b.lo), abs(b.hi)) ** q)
        if q > 0:
            lo = max(b.lo, 0.0) if e.guard else b.lo
            if lo < 0 and e.exponent.denominator == 1:
                return Interval(lo**q, b.hi**q)
            return Interval(lo**q, b.hi**q) if lo >= 0 else _ALL
        if b.lo > 0:
            return Interval(b.hi**q, b.lo**q)
        return _ALL
    if isinstance(e, Exp):
        a = bounds(e.arg, box)
        f = lambda x: 0.0 if x == -math.inf else (math.inf if x > 709 else math.exp(x))
        return Interval(f(a.lo), f(a.hi))
    if isinstance(e, Log):
        a = bounds(e.arg, box)
        if a.lo <= 0:
            return Interval(-math.inf, math.log(a.hi) if a.hi > 0 else -math.inf)
        return Interval(math.log(a.lo), math.log(a.hi))
    if isinstance(e, Call):
        p = get_primitive(e.name)
        out = Interval(*p.bounds) if p.bounds else _ALL
        if p.increasing:
            a = bounds(e.arg, box)
            lo = p.scalar(a.lo) if math.isfinite(a.lo) else out.lo
            hi = p.scalar(a.hi) if math.isfinite(a.hi) else out.hi
            out = Interval(max(lo, out.lo), min(hi, out.hi))
        return out
    raise TypeError(f"unknown node {type(e).__name__}")
