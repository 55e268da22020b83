from __future__ import annotations

import math

import numpy as np
import pytest

from stochctl.auxsde import GFamily, build_sde
from stochctl.expr import ONE, compile_exprs, parse_expr, simplify
from stochctl.geometry import ModelError
from stochctl.measure import (
    InvariantDensity,
    adjoint_generator_residual,
    batch_means,
    density_expr,
    fokker_planck,
    histogram_csv,
    kernel_overlap,
    stationarity_test,
    tempered_adjoint,
)
from stochctl.models import ChainSpec, build_chain, build_gaussian_1d, build_harmonic_pair, build_slow, build_trap


@pytest.fixture(scope="module")
def gauss():
    return build_sde(build_gaussian_1d(), GFamily.linear(1.0))


@pytest.fixture(scope="module")
def slow():
    return build_sde(build_slow(), GFamily.linear(1.0))


# -- adjoint ------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "make",
    [
        lambda: build_sde(build_gaussian_1d(), GFamily.linear(1.0)),
        lambda: build_sde(build_slow(), GFamily.linear(0.4)),
        lambda: build_sde(build_slow(), GFamily.logarithmic(2.0)),
        lambda: build_sde(build_harmonic_pair(), GFamily.linear(0.5)),
    ],
)
def test_tempered_density_is_invariant(make):
    s = make()
    rep = adjoint_generator_residual(s)
    assert rep.max_abs <= 1e-12
    assert rep.cross_check is not None and rep.cross_check <= 1e-12


def test_closed_form_agrees_with_fokker_planck_off_invariant(slow):
    F = simplify(parse_expr("exp(-(x^2 + y^2)) * (1 + x*y)", slow.model.variables))
    a, b = fokker_planck(slow, F), tempered_adjoint(slow, F)
    pts = np.random.default_rng(0).standard_normal((2, 50))
    vals = compile_exprs([a, b], 2)(pts)
    assert np.max(np.abs(vals[0])) > 1e-3
    assert np.max(np.abs(vals[0] - vals[1])) <= 1e-12


def test_wrong_density_is_detected(gauss):
    rep = adjoint_generator_residual(gauss, density=simplify(parse_expr("exp(-x^2)", ("x",))))
    assert not rep.passed and rep.max_abs > 1e-3


def test_density_positive_and_kinds():
    s = build_sde(build_slow())
    pts = np.random.default_rng(1).standard_normal((2, 100)) * 5
    assert np.all(InvariantDensity.of(s, normalise=False)(pts) > 0)
    with pytest.raises(ModelError):
        density_expr(build_sde(build_trap()))
    _, unequal = build_chain(ChainSpec(T=(1.0, 2.0)))
    with pytest.raises(ModelError):
        density_expr(unequal)


# -- normalisation -----------------------------------------------------------------------


def test_gaussian_normaliser(gauss):
    d = InvariantDensity.of(gauss)
    assert d.Z == pytest.approx(math.sqrt(2 * math.pi), rel=1e-9)
    assert d.Z_err <= 1e-8
    m1, m2, h = d.expectation([parse_expr(s, ("x",)) for s in ("x", "x^2", "x^2/2")])
    assert abs(m1) <= 1e-12 and m2 == pytest.approx(1.0, rel=1e-9) and h == pytest.approx(0.5, rel=1e-9)


def test_slow_normaliser(slow):
    d = InvariantDensity.of(slow)
    assert d.Z == pytest.approx(4 * math.pi / math.e, rel=1e-6)
    assert abs(d.Z - 4 * math.pi / math.e) <= 10 * max(d.Z_err, 1e-12)
    (EH,) = d.expectation([slow.H])
    assert EH == pytest.approx(2.5, rel=1e-6)


def test_expectation_of_one_is_exact(slow):
    (one,) = InvariantDensity.of(slow).expectation([ONE])
    assert one == pytest.approx(1.0, abs=1e-14)


# -- stationarity ----------------------------------------------------------------------


def test_batch_means_of_iid_series():
    v = np.random.default_rng(2).standard_normal(100_000)
    mean, se = batch_means(v, 20)
    assert abs(mean) <= 4 * se
    assert se == pytest.approx(1 / math.sqrt(100_000), rel=0.5)
    with pytest.raises(ValueError):
        batch_means(v[:5], 20)


def test_constant_test_function_passes_exactly(gauss):
    rep = stationarity_test(gauss, ["1"], run=20_000, dt=1e-2, seed=0)
    assert rep.averages == [1.0] and rep.passed


def test_slow_time_average_of_H_and_seed_agreement(slow):
    reps = [stationarity_test(slow, ["sqrt(1+x^2+y^2)", "x"], run=200_000, dt=1e-2, seed=s) for s in (0, 1)]
    for r in reps:
        assert r.passed, r.to_dict()
        assert r.summary == "consistent with unique invariant measure"
    a, b = reps
    for i in range(2):
        assert abs(a.averages[i] - b.averages[i]) <= 4 * math.hypot(a.std_errors[i], b.std_errors[i])


# -- kernel overlap ------------------------------------------------------------------------


def test_overlap_same_point_is_small(gauss):
    rep = kernel_overlap(gauss, [0.0], [0.0], t=0.5, paths=1000, dt=1e-2)
    assert 0 <= rep.estimate <= 2 * max(rep.width, 0.05)


def test_overlap_nearby_points_overlap(gauss):
    rep = kernel_overlap(gauss, [0.0], [0.1], t=1.0, paths=1000, dt=1e-2)
    assert rep.estimate < 1.0


def test_overlap_far_points_near_two(gauss):
    rep = kernel_overlap(gauss, [0.0], [8.0], t=0.2, paths=500, dt=1e-2)
    assert rep.estimate >= 1.9
    assert "diagnostic" in rep.label


def test_histogram_csv(tmp_path):
    samples = np.random.default_rng(3).standard_normal((500, 2))
    histogram_csv(tmp_path / "h.csv", samples, ["x", "y"], bins=10)
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "coordinate,bin_lo,bin_hi,count" and len(rows) == 21
    assert sum(int(r.split(",")[-1]) for r in rows[1:11]) == 500
