"""Recursive-descent parser for the textual expression grammar.

::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := ('-' | '+') unary | power
    power    := atom ('^' exponent)?
    exponent := ['-' | '+'] INT | '(' expr ')'      # must fold to a rational
    atom     := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Function names are ``sqrt``, ``exp``, ``log`` and any registered primitive.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .core import Call, Const, Exp, Expr, ExprError, Log, Pow, Var, add, mul, neg, power
from .primitives import get_primitive


class ParseError(ExprError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("end", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, names: Sequence[str]):
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = {n: Var(k, n) for k, n in enumerate(names)}

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise ParseError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t.text != text:
            self.error(f"expected {text!r}, found {t.text or 'end of input'!r}")
        return self.next()

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek().kind != "end":
            self.error(f"unexpected token {self.peek().text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.term()
            e = add(e, rhs if op == "+" else neg(rhs))
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            rhs = self.unary()
            e = mul(e, rhs if op == "*" else power(rhs, -1))
        return e

    def unary(self) -> Expr:
        t = self.peek()
        if t.text == "-":
            self.next()
            return neg(self.unary())
        if t.text == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text != "^":
            return base
        self.next()
        return Pow(base, self.exponent())

    def exponent(self) -> Fraction:
        t = self.peek()
        sign = 1
        if t.text in ("-", "+"):
            sign = -1 if t.text == "-" else 1
            self.next()
            t = self.peek()
        if t.kind == "int":
            self.next()
            return sign * Fraction(int(t.text))
        if t.text == "(":
            from .simplify import simplify

            self.next()
            inner = simplify(self.expr())
            self.expect(")")
            if isinstance(inner, Const):
                q = Fraction(inner.value)
                if isinstance(inner.value, Fraction) or q.limit_denominator(1000) == q:
                    return sign * q.limit_denominator(1000)
            self.error("exponent must be a rational constant", t)
        self.error("exponent must be an integer or a parenthesised rational", t)

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "int":
            return Const(Fraction(int(t.text)))
        if t.kind == "float":
            return Const(float(t.text))
        if t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name":
            if self.peek().text == "(":
                self.next()
                arg = self.expr()
                self.expect(")")
                return self.function(t, arg)
            if t.text in self.vars:
                return self.vars[t.text]
            self.error(f"unknown variable {t.text!r}", t)
        self.error(f"unexpected token {t.text or 'end of input'!r}", t)

    def function(self, t: _Tok, arg: Expr) -> Expr:
        if t.text == "sqrt":
            return Pow(arg, Fraction(1, 2))
        if t.text == "exp":
            return Exp(arg)
        if t.text == "log":
            return Log(arg)
        try:
            get_primitive(t.text)
        except KeyError:
            self.error(f"unknown function {t.text!r}", t)
        return Call(t.text, arg)


def parse_expr(text: str, names: Sequence[str]) -> Expr:
    """Parse ``text`` over the declared variable ``names`` (unsimplified)."""
    return _Parser(text, names).parse()
