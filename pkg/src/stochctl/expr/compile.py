"""Compilation of expression tuples into vectorised numpy evaluators."""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Sequence

import numpy as np

from .calculus import is_polynomial, monomials
from .core import Add, Call, Const, DomainError, Exp, Expr, Log, Mul, Pow, Var, evaluate
from .primitives import get_primitive

_counter = itertools.count()


def _generate(exprs: Sequence[Expr]) -> tuple[str, dict]:
    counts: dict[Expr, int] = {}
    seen: set[Expr] = set()

    def visit(e: Expr):
        if e in seen:
            return
        seen.add(e)
        for c in e.children:
            counts[c] = counts.get(c, 0) + 1
            visit(c)

    for e in exprs:
        counts[e] = counts.get(e, 0) + 1
        visit(e)

    lines: list[str] = []
    names: dict[Expr, str] = {}
    used_vars: set[int] = set()
    prims: dict[str, str] = {}
    tmp = itertools.count()

    def code(e: Expr) -> str:
        if e in names:
            return names[e]
        if isinstance(e, Const):
            return repr(float(e.value))
        if isinstance(e, Var):
            used_vars.add(e.index)
            return f"v{e.index}"
        if isinstance(e, Add):
            s = "(" + " + ".join(code(t) for t in e.terms) + ")"
        elif isinstance(e, Mul):
            s = "(" + " * ".join(code(f) for f in e.factors) + ")"
        elif isinstance(e, Pow):
            b = code(e.base)
            q = e.exponent
            if q == Fraction(1, 2):
                s = f"sqrt({b})"
            elif q == Fraction(-1, 2):
                s = f"(1.0 / sqrt({b}))"
            elif q.denominator == 1:
                s = f"({b} ** {q.numerator})"
            else:
                s = f"({b} ** {float(q)!r})"
        elif isinstance(e, Exp):
            s = f"exp({code(e.arg)})"
        elif isinstance(e, Log):
            s = f"log({code(e.arg)})"
        elif isinstance(e, Call):
            alias = prims.setdefault(e.name, f"P_{e.name}")
            s = f"{alias}({code(e.arg)})"
        else:
            raise TypeError(f"cannot compile {type(e).__name__}")
        if counts.get(e, 0) > 1:
            name = f"t{next(tmp)}"
            lines.append(f"    {name} = {s}")
            names[e] = name
            return name
        return s

    body = [f"    out[{i}] = {code(e)}" for i, e in enumerate(exprs)]
    head = [f"    v{i} = v[{i}]" for i in sorted(used_vars)]
    src = "def _kernel(v, out):\n" + "\n".join(head + lines + body + ["    return out"]) + "\n"
    ns = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt}
    for name, alias in prims.items():
        ns[alias] = get_primitive(name).vector
    return src, ns


class _PolyKernel:
    """Sparse evaluation of polynomial components: sum of coef * prod(v[idx])."""

    def __init__(self, exprs: Sequence[Expr], nvars: int):
        rows, coefs, idxs = [], [], []
        degree = 1
        for i, e in enumerate(exprs):
            for c, powers in monomials(e):
                flat = [j for j, p in sorted(powers.items()) for _ in range(p)]
                degree = max(degree, len(flat))
                rows.append(i)
                coefs.append(c)
                idxs.append(flat)
        order = np.argsort(rows, kind="stable")
        self.rows = np.asarray(rows, dtype=np.intp)[order]
        self.coef = np.asarray(coefs, dtype=float)[order]
        pad = np.full((len(idxs), degree), nvars, dtype=np.intp)
        for k, flat in enumerate(idxs):
            pad[k, : len(flat)] = flat
        self.idx = pad[order]
        self.m = len(exprs)
        self.nvars = nvars
        present = np.unique(self.rows)
        self.present = present
        self.starts = np.searchsorted(self.rows, present)

    def __call__(self, v, out):
        v = np.asarray(v, dtype=float)
        ext = np.concatenate([v, np.ones((1,) + v.shape[1:])], axis=0)
        vals = np.prod(ext[self.idx], axis=1)
        vals *= self.coef.reshape((-1,) + (1,) * (vals.ndim - 1))
        out[...] = 0.0
        if len(self.present):
            out[self.present] = np.add.reduceat(vals, self.starts, axis=0)
        return out


class CompiledExprs:
    """Vectorised evaluator for a fixed tuple of expressions.

    Calling with ``v`` of shape ``(nvars, ...)`` returns an array of shape
    ``(len(exprs), ...)``. Results agree with :func:`evaluate` to rounding.
    """

    def __init__(self, exprs: Sequence[Expr], nvars: int, *, backend: str = "auto"):
        self.exprs = tuple(exprs)
        self.nvars = int(nvars)
        for e in self.exprs:
            bad = [i for i in e.variables() if i >= self.nvars]
            if bad:
                raise ValueError(f"expression references variable index {bad[0]} >= {self.nvars}")
        if backend == "auto":
            n_terms = sum(len(e.terms) if isinstance(e, Add) else 1 for e in self.exprs)
            poly = n_terms >= 256 and all(is_polynomial(e) for e in self.exprs)
            backend = "poly" if poly else "codegen"
        self.backend = backend
        if backend == "poly":
            self._kernel = _PolyKernel(self.exprs, self.nvars)
            self.source = None
        elif backend == "codegen":
            src, ns = _generate(self.exprs)
            exec(compile(src, f"<stochctl-kernel-{next(_counter)}>", "exec"), ns)
            self._kernel = ns["_kernel"]
            self.source = src
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def __len__(self) -> int:
        return len(self.exprs)

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.nvars:
            raise ValueError(f"expected leading dimension {self.nvars}, got {v.shape[0]}")
        out = np.empty((len(self.exprs),) + v.shape[1:])
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            self._kernel(v, out)
        if np.isnan(out).any():
            self._locate_domain_error(v, out)
        return out

    def _locate_domain_error(self, v, out):
        flat_v = v.reshape(self.nvars, -1)
        flat_out = out.reshape(len(self.exprs), -1)
        comp, col = map(int, np.argwhere(np.isnan(flat_out))[0])
        point = flat_v[:, col]
        # tree-walk raises with the offending subexpression
        evaluate(self.exprs[comp], point)
        raise DomainError("evaluation produced NaN", self.exprs[comp])

    def at(self, point: Sequence[float]) -> np.ndarray:
        """Evaluate at a single point, returning a 1-D array."""
        return self(np.asarray(point, dtype=float).reshape(self.nvars, 1))[:, 0]


def compile_exprs(exprs: Sequence[Expr], nvars: int, backend: str = "auto") -> CompiledExprs:
    return CompiledExprs(exprs, nvars, backend=backend)
