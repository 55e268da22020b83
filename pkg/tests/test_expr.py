from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from stochctl.expr import (
    ZERO,
    Const,
    DomainError,
    ParseError,
    Primitive,
    UnregisteredDerivative,
    bounds,
    bump,
    compile_exprs,
    differentiate,
    evaluate,
    exp,
    expand,
    get_primitive,
    gsat,
    log,
    parse_expr,
    register_primitive,
    simplify,
    sqrt,
    substitute,
    variables,
)
from stochctl.expr.core import Call

X, Y = variables(("x", "y"))
NAMES = ("x", "y")


def fd(e, i, z, h=1e-5):
    zp, zm = list(z), list(z)
    zp[i] += h
    zm[i] -= h
    return (evaluate(e, zp) - evaluate(e, zm)) / (2 * h)


# -- random expressions -----------------------------------------------------------

leaves = st.sampled_from([X, Y, Const(1), Const(2), Const(Fraction(1, 2)), Const(-3), Const(0.75)])


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda t: t[0] + t[1]),
        st.tuples(children, children).map(lambda t: t[0] * t[1]),
        st.tuples(children, children).map(lambda t: t[0] - t[1]),
        st.tuples(children, st.integers(1, 3)).map(lambda t: t[0] ** t[1]),
        children.map(lambda e: sqrt(1 + e * e)),
        children.map(lambda e: exp(gsat(e))),
        children.map(lambda e: log(2 + gsat(e))),
        children.map(gsat),
    )


exprs = st.recursive(leaves, _extend, max_leaves=6)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(exprs, points)
def test_simplify_preserves_value(e, z):
    a = evaluate(e, z)
    b = evaluate(simplify(e), z)
    assert abs(a - b) <= 1e-12 * (1 + abs(a))


@settings(max_examples=150, deadline=None)
@given(exprs)
def test_simplify_is_idempotent(e):
    s = simplify(e)
    assert simplify(s) == s


@settings(max_examples=100, deadline=None)
@given(exprs, points, st.sampled_from([0, 1]))
def test_derivative_matches_finite_differences(e, z, i):
    d = evaluate(differentiate(e, i), z)
    assert abs(d - fd(e, i, z)) <= 1e-5 * max(1.0, abs(d))


@settings(max_examples=60, deadline=None)
@given(exprs, exprs, points, st.integers(-3, 3))
def test_differentiation_is_linear(e1, e2, z, a):
    lhs = differentiate(a * e1 + e2, 0)
    rhs = simplify(a * differentiate(e1, 0) + differentiate(e2, 0))
    va, vb = evaluate(lhs, z), evaluate(rhs, z)
    assert abs(va - vb) <= 1e-10 * (1 + abs(va))


@settings(max_examples=80, deadline=None)
@given(exprs, points)
def test_compiled_matches_tree_walk(e, z):
    c = compile_exprs([e], 2).at(z)[0]
    v = evaluate(e, z)
    assert abs(c - v) <= 1e-12 * (1 + abs(v))


@settings(max_examples=80, deadline=None)
@given(exprs)
def test_print_parse_round_trip(e):
    s = simplify(e)
    again = simplify(parse_expr(str(s), NAMES))
    z = (0.3, -0.7)
    assert abs(evaluate(again, z) - evaluate(s, z)) <= 1e-12 * (1 + abs(evaluate(s, z)))


@settings(max_examples=60, deadline=None)
@given(exprs, st.floats(-1, 1), st.floats(0, 1.5))
def test_interval_bounds_contain_samples(e, lo, width):
    box = {0: (lo, lo + width), 1: (lo, lo + width)}
    iv = bounds(e, box)
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.uniform(lo, lo + width, 2)
        v = evaluate(e, z)
        assert iv.lo - 1e-9 * (1 + abs(v)) <= v <= iv.hi + 1e-9 * (1 + abs(v))


# -- documented examples -------------------------------------------------------------


def test_derivative_of_square():
    assert differentiate(X**2, 0) == simplify(2 * X)


def test_derivative_of_slow_energy():
    H = sqrt(1 + X**2 + Y**2)
    d = differentiate(H, 0)
    rng = np.random.default_rng(1)
    for z in rng.standard_normal((20, 2)):
        assert evaluate(d, z) == pytest.approx(z[0] / math.sqrt(1 + z @ z), rel=1e-14)


def test_chain_rule_through_saturation():
    e = gsat(Y + gsat(X))
    d = differentiate(e, 1)
    rng = np.random.default_rng(2)
    g = lambda v: v / math.sqrt(1 + v * v)
    for z in rng.uniform(-3, 3, (100, 2)):
        a = z[1] + g(z[0])
        assert abs(evaluate(d, z) - (1 + a * a) ** -1.5) <= 1e-14
        assert abs(evaluate(d, z) - fd(e, 1, z)) <= 1e-6


def test_bump_derivative_matches_finite_differences():
    e = bump(Y)
    d = differentiate(e, 1)
    for y in np.linspace(-3.4, 3.4, 69):
        z = (0.0, float(y))
        assert abs(evaluate(d, z) - fd(e, 1, z)) <= 1e-6


def test_bump_values():
    for y, expected in [(0.0, 0.0), (1.9, 0.0), (-2.0, 0.0), (3.0, 1.0), (-4.5, 1.0)]:
        assert evaluate(bump(Y), (0.0, y)) == pytest.approx(expected, abs=1e-15)
    vals = [evaluate(bump(Y), (0.0, y)) for y in np.linspace(2, 3, 50)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_unregistered_derivative_names_primitive():
    register_primitive(Primitive("nodiff_test", math.sin, np.sin), replace=True)
    with pytest.raises(UnregisteredDerivative, match="nodiff_test"):
        differentiate(Call("nodiff_test", X), 0)


def test_evaluate_examples():
    assert evaluate(X * Y, (2, 3)) == 6
    assert evaluate(sqrt(1 + X**2 + Y**2), (0, 0)) == 1


def test_tempered_density_composition():
    H = sqrt(1 + X**2 + Y**2)
    g = 0.7 * H
    rng = np.random.default_rng(3)
    for z in rng.standard_normal((50, 2)):
        assert abs(evaluate(exp(-g), z) - math.exp(-evaluate(g, z))) <= 1e-14


def test_domain_error_carries_subexpression():
    e = sqrt(X - 1)
    with pytest.raises(DomainError) as err:
        evaluate(e, (0.0, 0.0))
    assert err.value.subexpr is not None
    with pytest.raises(DomainError):
        compile_exprs([e], 2)(np.array([[0.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(DomainError):
        evaluate(log(X), (-1.0, 0.0))


def test_simplify_examples():
    assert simplify(X + 0 * Y) == X
    H = sqrt(1 + X**2 + Y**2)
    f = (-differentiate(H, 1), differentiate(H, 0))
    cons = simplify(differentiate(H, 0) * f[0] + differentiate(H, 1) * f[1])
    assert cons == ZERO
    assert simplify(sqrt(1 + X**2) ** 2) == simplify(1 + X**2)


def test_expand_polynomial():
    e = expand((X + Y) ** 3 - X**3 - Y**3 - 3 * X * Y * (X + Y))
    assert e == ZERO


def test_substitute():
    e = substitute(X**2 + Y, {0: Y + 1})
    assert evaluate(e, (10.0, 2.0)) == 11.0


def test_parse_errors_report_position():
    with pytest.raises(ParseError) as err:
        parse_expr("x + * y", NAMES)
    assert err.value.column == 5
    with pytest.raises(ParseError) as err:
        parse_expr("x +\n  z", NAMES)
    assert (err.value.line, err.value.column) == (2, 3)
    with pytest.raises(ParseError):
        parse_expr("unknownfn(x)", NAMES)


def test_parse_grammar():
    e = parse_expr("-x^2 + 3*exp(-y/2) - sqrt(1 + x^2)/gsat(y) + bump(x)^(1/2)", NAMES)
    z = (0.4, 1.3)
    g = 1.3 / math.sqrt(1 + 1.69)
    expected = -0.16 + 3 * math.exp(-0.65) - math.sqrt(1.16) / g + 0.0
    assert evaluate(e, z) == pytest.approx(expected, rel=1e-14)


def test_rational_constants_stay_exact():
    e = simplify(Const(Fraction(1, 3)) * X + Const(Fraction(2, 3)) * X)
    assert e == X


def test_primitive_bounds_declared():
    assert get_primitive("gsat").bounds == (-1.0, 1.0)
    iv = bounds(gsat(X), {0: (0.0, 1.0)})
    assert iv.lo == 0.0 and iv.hi == pytest.approx(1 / math.sqrt(2))
    assert bounds(bump(Y), {}).lo == 0.0 and bounds(bump(Y), {}).hi == 1.0


def test_poly_backend_agrees_with_codegen():
    rng = np.random.default_rng(4)
    vs = variables([f"v{i}" for i in range(6)])
    terms = [float(rng.standard_normal()) * vs[i] * vs[j] for i in range(6) for j in range(6)]
    e = simplify(sum(terms[1:], terms[0]))
    pts = rng.standard_normal((6, 7))
    a = compile_exprs([e, X], 6, backend="poly")(pts)
    b = compile_exprs([e, X], 6, backend="codegen")(pts)
    assert np.max(np.abs(a - b)) <= 1e-12
