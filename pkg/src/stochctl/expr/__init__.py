"""Minimal symbolic scalar expressions: exact differentiation, a fixed-rule
simplifier, infix parsing/printing and compiled numpy evaluation."""

from .calculus import (
    ExpansionTooLarge,
    differentiate,
    expand,
    gradient,
    is_polynomial,
    monomials,
    polynomial_from_monomials,
)
from .compile import CompiledExprs, compile_exprs
from .core import (
    ONE,
    ZERO,
    Add,
    Call,
    Const,
    DomainError,
    Exp,
    Expr,
    ExprError,
    Log,
    Mul,
    Pow,
    UnregisteredDerivative,
    Var,
    evaluate,
    exp,
    is_zero,
    log,
    node_count,
    sqrt,
    substitute,
    variables,
    wrap,
)
from .interval import Interval, bounds
from .parser import ParseError, parse_expr
from .primitives import Primitive, bump, bump_expansion, get_primitive, gsat, register_primitive
from .printer import to_text
from .simplify import simplify

__all__ = [
    "Add", "Call", "CompiledExprs", "Const", "DomainError", "Exp", "ExpansionTooLarge", "Expr",
    "ExprError", "Interval", "Log", "Mul", "ONE", "ParseError", "Pow", "Primitive",
    "UnregisteredDerivative", "Var", "ZERO", "bounds", "bump", "bump_expansion", "compile_exprs",
    "differentiate", "evaluate", "exp", "expand", "get_primitive", "gradient", "gsat",
    "is_polynomial", "is_zero", "log", "monomials", "node_count", "parse_expr",
    "polynomial_from_monomials", "register_primitive", "simplify", "sqrt", "substitute",
    "to_text", "variables", "wrap",
]
