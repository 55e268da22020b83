from __future__ import annotations

import itertools

import numpy as np
import pytest

from stochctl.auxsde import build_sde
from stochctl.expr import Const, compile_exprs, parse_expr, simplify
from stochctl.geometry import ModelError, check_conserved, check_divergence_free, flow, hormander_rank
from stochctl.measure import adjoint_generator_residual
from stochctl.models import (
    BUILDERS,
    ChainSpec,
    EulerTruncationSpec,
    build_chain,
    build_euler_galerkin,
    build_slow,
    build_trap,
    chain_sde_for,
    euler_rhs_complex,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    trap_certificate,
)


@pytest.fixture(scope="module")
def euler():
    return build_euler_galerkin(1)


# -- Euler truncation ---------------------------------------------------------------


def test_euler_mode_count_matches_enumeration():
    ks = [k for k in itertools.product((-1, 0, 1), repeat=3) if any(k)]
    spec = EulerTruncationSpec(1)
    assert len(ks) == 26
    assert len(spec.representatives) == 13 and spec.N == 52
    assert set(spec.index) == set(ks)
    assert EulerTruncationSpec(2).N == 4 * (5**3 - 1) // 2


def test_euler_nstar_zero_rejected():
    with pytest.raises(ModelError):
        build_euler_galerkin(0)


def test_euler_modes_are_divergence_free_and_hermitian():
    spec = EulerTruncationSpec(1)
    z = np.random.default_rng(0).standard_normal(spec.N)
    modes = spec.modes(z)
    for k, u in modes.items():
        assert abs(np.array(k) @ u) <= 1e-14
        assert np.max(np.abs(modes[tuple(-c for c in k)] - np.conj(u))) <= 1e-15
    assert np.max(np.abs(spec.coordinates(modes) - z)) <= 1e-14


def test_euler_field_matches_complex_oracle(euler):
    spec = EulerTruncationSpec(1)
    rng = np.random.default_rng(1)
    for z in rng.standard_normal((5, spec.N)):
        rhs = euler_rhs_complex(spec, spec.modes(z))
        for k, v in rhs.items():
            assert abs(np.array(k) @ v) <= 1e-13
        expected = spec.coordinates(rhs)
        assert np.max(np.abs(euler.field.compiled.at(z) - expected)) <= 1e-12


def test_euler_energy_is_sum_of_mode_energies(euler):
    spec = EulerTruncationSpec(1)
    z = np.random.default_rng(2).standard_normal(spec.N)
    energy = sum(float(np.vdot(u, u).real) for u in spec.modes(z).values())
    assert compile_exprs([euler.H], spec.N).at(z)[0] == pytest.approx(energy, rel=1e-13)


def test_euler_conservation_and_divergence(euler):
    assert check_divergence_free(euler.field).passed
    res = check_conserved(euler)
    assert res.passed and res.max_abs <= 1e-10


def test_euler_rk4_energy_drift(euler):
    z0 = np.random.default_rng(3).standard_normal(euler.N) * 0.3
    traj = flow(euler, z0, 1e-3, 2000, record_every=100)
    Hf = compile_exprs([euler.H], euler.N)
    H = Hf(traj.T)[0]
    assert np.max(np.abs(H - H[0])) / H[0] <= 1e-10


def test_euler_controls_low_modes(euler):
    assert len(euler.control_indices) == 12
    spec = EulerTruncationSpec(1)
    assert all(sum(c * c for c in spec.representatives[i // 4]) == 1 for i in euler.control_indices)


# -- chain ----------------------------------------------------------------------------


def test_chain_conserves_H():
    m, _ = build_chain(ChainSpec(F=("q1", "gsat(q1)"), lam=(1.0, 0.5)))
    assert check_conserved(m).passed
    assert check_divergence_free(m.field).passed


def test_chain_constant_shift_in_system_energy_is_invisible():
    base, _ = build_chain()
    shifted, _ = build_chain(ChainSpec(H_S="(p1^2 + q1^2)/2 + 3"))
    pts = np.random.default_rng(4).standard_normal((4, 20))
    assert np.max(np.abs(base.field.compiled(pts) - shifted.field.compiled(pts))) == 0.0
    Hb = compile_exprs([base.H, shifted.H], 4)(pts)
    assert np.max(np.abs(Hb[1] - Hb[0] - 3)) <= 1e-13


def test_chain_equal_temperature_gibbs_density():
    _, sde = build_chain(ChainSpec(T=(0.7, 0.7)))
    rep = adjoint_generator_residual(sde)
    assert rep.max_abs <= 1e-8


def test_chain_unscaled_noise_needs_unit_lambda():
    _, literal = build_chain(ChainSpec(lam=(2.0, 2.0)))
    _, scaled = build_chain(ChainSpec(lam=(2.0, 2.0), lambda_scaled_noise=True))
    assert adjoint_generator_residual(literal).max_abs > 1.0
    assert adjoint_generator_residual(scaled).max_abs <= 1e-8


def test_chain_validation():
    with pytest.raises(ModelError):
        ChainSpec(F=("q1",))
    with pytest.raises(ModelError):
        ChainSpec(gamma=(1.0, 0.0))
    with pytest.raises(ModelError):
        build_chain(ChainSpec(F=("r1", "q1")))


def test_chain_sde_rebuilt_from_flags(tmp_path):
    m, sde = build_chain(ChainSpec(T=(1.0, 2.0)))
    save_model(m, tmp_path / "chain.json")
    again = chain_sde_for(load_model(tmp_path / "chain.json"))
    assert again is not None and again.meta["T"] == [1.0, 2.0]
    pts = np.random.default_rng(5).standard_normal((4, 10))
    assert np.max(np.abs(again.kernel(pts) - sde.kernel(pts))) <= 1e-14


# -- small models ------------------------------------------------------------------------


def test_trap_certificate_holds():
    cert = trap_certificate()
    assert cert.holds
    assert cert.min_upper > 0.01 and cert.max_lower < -0.01
    assert "holds" in cert.describe()


def test_trap_spans_yet_is_a_trap():
    m = build_trap()
    assert m.H is None and m.flags["trap"]
    assert hormander_rank(m, np.array([0.0, 3.0])).verdict == "spans"


def test_slow_y_speed_limit():
    m = build_slow()
    xs = np.linspace(-1e3, 1e3, 201)
    X, Y = np.meshgrid(xs, xs)
    vals = m.field.compiled(np.stack([X.ravel(), Y.ravel()]))
    assert np.max(np.abs(vals[1])) <= 1.0


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_model_file_round_trip(name, tmp_path):
    m = BUILDERS[name]()
    path = tmp_path / f"{name}.json"
    save_model(m, path)
    back = load_model(path)
    assert back.variables == m.variables and back.control_indices == m.control_indices
    assert back.flags == m.flags
    pts = np.random.default_rng(6).standard_normal((m.N, 10))
    assert np.max(np.abs(back.field.compiled(pts) - m.field.compiled(pts))) <= 1e-12
    if m.H is not None:
        Hs = compile_exprs([m.H, back.H], m.N)(pts)
        assert np.max(np.abs(Hs[0] - Hs[1])) <= 1e-12 * (1 + np.max(np.abs(Hs[0])))


def test_model_file_with_basis_and_bad_schema():
    m = build_slow().with_control_basis(np.array([[1.0], [0.0]]))
    d = model_to_dict(m)
    assert "basis" in d["control"]
    assert model_from_dict(d).basis.shape == (2, 1)
    d["schema"] = "other/1"
    with pytest.raises(ModelError):
        model_from_dict(d)


def test_zoo_models_with_H_build_an_sde():
    for name in ("harmonic-pair", "slow", "gaussian-1d"):
        s = build_sde(BUILDERS[name]())
        assert s.kind == "auxiliary"
    assert build_sde(build_trap()).kind == "additive"
