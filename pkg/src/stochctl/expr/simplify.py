"""Fixed-rule simplifier.

Rules, applied bottom-up and iterated to a fixed point:

* constant folding (exact on :class:`~fractions.Fraction`, float otherwise),
  including ``exp``/``log``/primitives of constants;
* zero/one identities (``0*e -> 0``, ``1*e -> e``, ``e^0 -> 1``, ``e^1 -> e``);
* flattening of nested sums and products;
* like-term collection in sums (terms keyed by their non-constant part) and
  power collection in products (``x^a * x^b -> x^(a+b)``,
  ``exp(a)*exp(b) -> exp(a+b)``);
* ``(x^p)^q -> x^(pq)`` when ``q`` is an integer or ``x`` is guarded;
  integer powers distribute over products; ``exp(a)^q -> exp(q a)``;
  ``exp(log(a)) -> a`` and ``log(exp(a)) -> a``;
* a numeric coefficient distributes over a lone sum factor.

Canonical ordering of terms and factors uses the printed form, so equal
inputs produce structurally equal outputs.
"""

from __future__ import annotations

import math
from fractions import Fraction

from .core import ONE, ZERO, Add, Call, Const, Exp, Expr, Log, Mul, Pow, Var


def _key(e: Expr) -> tuple[int, str]:
    rank = 0 if isinstance(e, Const) else 1
    return (rank, str(e))


def _exact_root(v: Fraction, q: Fraction) -> Fraction | None:
    d = q.denominator
    out = []
    for n in (v.numerator, v.denominator):
        r = round(n ** (1.0 / d))
        for cand in (r - 1, r, r + 1):
            if cand >= 0 and cand**d == n:
                out.append(cand)
                break
        else:
            return None
    return Fraction(out[0], out[1]) ** q.numerator


def _fold_pow(v, q: Fraction, guard: bool):
    """Fold ``v ** q`` to a number, or return None when it must stay symbolic."""
    if v == 0:
        return Fraction(0) if q > 0 else None
    if isinstance(v, Fraction):
        if q.denominator == 1:
            return v ** int(q)
        if v < 0:
            return None
        exact = _exact_root(v, q)
        if exact is not None:
            return exact
        return float(v) ** float(q)
    if v < 0 and q.denominator != 1:
        return None
    return float(v) ** (int(q) if q.denominator == 1 else float(q))


def _term_parts(t: Expr) -> tuple:
    if isinstance(t, Const):
        return t.value, None
    if isinstance(t, Mul) and isinstance(t.factors[0], Const):
        rest = t.factors[1:]
        return t.factors[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), t


def _make_term(c, rest: Expr) -> Expr:
    if c == 1:
        return rest
    if isinstance(rest, Mul):
        return Mul((Const(c),) + rest.factors)
    return Mul((Const(c), rest))


class _Simplifier:
    def __init__(self):
        self.memo: dict[Expr, Expr] = {}

    def __call__(self, e: Expr) -> Expr:
        hit = self.memo.get(e)
        if hit is not None:
            return hit
        out = self._dispatch(e)
        self.memo[e] = out
        return out

    def _dispatch(self, e: Expr) -> Expr:
        if isinstance(e, (Const, Var)):
            return e
        if isinstance(e, Add):
            return self.add([self(t) for t in e.terms])
        if isinstance(e, Mul):
            return self.mul([self(f) for f in e.factors])
        if isinstance(e, Pow):
            return self.pow(self(e.base), e.exponent, e.guard)
        if isinstance(e, Exp):
            return self.exp(self(e.arg))
        if isinstance(e, Log):
            a = self(e.arg)
            if isinstance(a, Const) and a.value > 0:
                return ZERO if a.value == 1 else Const(math.log(a.value))
            if isinstance(a, Exp):
                return a.arg
            return Log(a)
        if isinstance(e, Call):
            a = self(e.arg)
            if isinstance(a, Const):
                from .primitives import get_primitive

                return Const(float(get_primitive(e.name).scalar(float(a.value))))
            return Call(e.name, a)
        raise TypeError(f"unknown node {type(e).__name__}")

    def exp(self, a: Expr) -> Expr:
        if isinstance(a, Const):
            return ONE if a.value == 0 else Const(math.exp(a.value))
        if isinstance(a, Log):
            return a.arg
        return Exp(a)

    def add(self, terms: list[Expr]) -> Expr:
        flat: list[Expr] = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, Add) else (t,))
        const = Fraction(0)
        coeffs: dict[Expr, object] = {}
        for t in flat:
            c, rest = _term_parts(t)
            if rest is None:
                const = const + c
            elif rest in coeffs:
                coeffs[rest] = coeffs[rest] + c
            else:
                coeffs[rest] = c
        out = [_make_term(c, rest) for rest, c in coeffs.items() if c != 0]
        out.sort(key=_key)
        if const != 0:
            out.insert(0, Const(const))
        if not out:
            return ZERO
        if len(out) == 1:
            return out[0]
        return Add(out)

    def mul(self, factors: list[Expr]) -> Expr:
        flat: list[Expr] = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, Mul) else (f,))
        coef = Fraction(1)
        powers: dict[Expr, list] = {}
        exp_args: list[Expr] = []
        for f in flat:
            if isinstance(f, Const):
                coef = coef * f.value
                continue
            if isinstance(f, Exp):
                exp_args.append(f.arg)
                continue
            if isinstance(f, Pow):
                base, q, g = f.base, f.exponent, f.guard
            else:
                base, q, g = f, Fraction(1), False
            if base in powers:
                powers[base][0] += q
                powers[base][1] = powers[base][1] or g
            else:
                powers[base] = [q, g]
        if coef == 0:
            return ZERO
        out: list[Expr] = []
        pending: list[Expr] = []
        for base, (q, g) in powers.items():
            if q == 0:
                continue
            p = base if q == 1 else self.pow(base, q, g)
            if isinstance(p, Const):
                coef = coef * p.value
            elif isinstance(p, (Mul, Exp)):
                pending.append(p)
            else:
                out.append(p)
        if pending:
            return self.mul([Const(coef)] + out + pending + [Exp(a) for a in exp_args])
        if exp_args:
            a = self.add(exp_args) if len(exp_args) > 1 else exp_args[0]
            e = self.exp(a)
            if isinstance(e, Const):
                coef = coef * e.value
            else:
                out.append(e)
        if coef == 0:
            return ZERO
        out.sort(key=_key)
        if not out:
            return Const(coef)
        if len(out) == 1 and isinstance(out[0], Add) and coef != 1:
            return self.add([self.mul([Const(coef), t]) for t in out[0].terms])
        if coef == 1:
            return out[0] if len(out) == 1 else Mul(out)
        return Mul([Const(coef)] + out)

    def pow(self, base: Expr, q: Fraction, guard: bool) -> Expr:
        if q == 0:
            return ONE
        if q == 1:
            return base
        if isinstance(base, Const):
            v = _fold_pow(base.value, q, guard)
            if v is not None:
                return Const(v)
            return Pow(base, q, guard)
        if isinstance(base, Pow) and (base.guard or q.denominator == 1):
            qq = base.exponent * q
            return self.pow(base.base, qq, qq.denominator != 1)
        if isinstance(base, Mul) and q.denominator == 1:
            return self.mul([self.pow(f, q, False) for f in base.factors])
        if isinstance(base, Exp):
            return self.exp(self.mul([Const(q), base.arg]))
        return Pow(base, q, q.denominator != 1)


def simplify(e: Expr, max_rounds: int = 12) -> Expr:
    """Simplify ``e`` with the fixed rule set until it stops changing."""
    s = _Simplifier()
    cur = e
    for _ in range(max_rounds):
        nxt = s(cur)
        if nxt == cur:
            return nxt
        cur = nxt
    return cur
