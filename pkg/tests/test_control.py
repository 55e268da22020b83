from __future__ import annotations

import math

import numpy as np
import pytest

from stochctl.auxsde import GFamily, build_sde, integrate
from stochctl.control import (
    ControlSignal,
    SteerGateError,
    TargetSet,
    extract_control,
    find_hitting_path,
    mollify,
    replay_euler,
    steer,
    verify_control,
)
from stochctl.expr import ZERO, Const, variables
from stochctl.geometry import ModelSpec, VectorField
from stochctl.models import build_gaussian_1d, build_harmonic_pair, build_slow, build_trap

SLOW_G = GFamily.linear(0.1)


@pytest.fixture(scope="module")
def slow_hit():
    m = build_slow()
    s = build_sde(m, SLOW_G)
    target = TargetSet((0.0, 5.0), 0.25)
    res = find_hitting_path(s, [0.0, 0.0], target, dt=1e-3, max_steps=100_000, max_attempts=256, seed=0)
    return m, s, target, res


def test_target_set():
    t = TargetSet((1.0, 0.0), 0.5)
    assert t.contains([1.2, 0.1]) and not t.contains([2.0, 0.0])
    assert t.shrink(0.5).radius == 0.25
    with pytest.raises(ValueError):
        TargetSet((0.0,), 0.0)


def test_start_inside_target_hits_at_time_zero():
    s = build_sde(build_gaussian_1d())
    res = find_hitting_path(s, [0.1], TargetSet((0.0,), 0.5))
    assert res.hit and res.T == 0.0 and res.attempts == 0


@pytest.mark.slow
def test_gaussian_hitting_is_recurrent():
    s = build_sde(build_gaussian_1d(), GFamily.linear(1.0))
    target = TargetSet((1.5,), 0.25)
    times = []
    for seed in range(200):
        res = find_hitting_path(s, [0.0], target, dt=2e-3, max_steps=200_000, max_attempts=1, seed=seed)
        assert res.hit
        assert abs(res.trajectory.states[-1, 0] - 1.5) <= 0.25
        times.append(res.T)
    assert len(times) == 200 and math.isfinite(np.mean(times)) and min(times) > 0


def test_lowest_attempt_index_wins():
    s = build_sde(build_gaussian_1d(), GFamily.linear(1.0))
    target = TargetSet((1.0,), 0.2)
    a = find_hitting_path(s, [0.0], target, dt=1e-2, max_steps=300, max_attempts=64, seed=3, batch=64)
    b = find_hitting_path(s, [0.0], target, dt=1e-2, max_steps=300, max_attempts=64, seed=3, batch=8)
    assert a.hit and (a.attempt_index, a.T) == (b.attempt_index, b.T)
    for p in range(a.attempt_index):
        tr = integrate(s, [0.0], 1e-2, 300, seed=3, path=p)
        assert not np.any(target.contains(tr.states.T))


def test_no_hit_reports_closest_approach():
    s = build_sde(build_gaussian_1d(), GFamily.linear(1.0))
    res = find_hitting_path(s, [0.0], TargetSet((50.0,), 0.25), dt=1e-2, max_steps=200, max_attempts=8, seed=0)
    assert not res.hit and res.attempts == 8
    assert 45 < res.closest < 50 and res.closest_time is not None


def test_slow_hits_respect_speed_limit(slow_hit):
    m, s, target, res = slow_hit
    assert res.hit
    assert target.contains(res.trajectory.states[-1])
    assert res.T >= 4.75


def test_extract_and_replay_round_trip(slow_hit):
    m, s, target, res = slow_hit
    u = extract_control(m, res.trajectory, 1e-3)
    replay = replay_euler(m, [0.0, 0.0], u)
    assert np.max(np.abs(replay - res.trajectory.states)) <= 1e-12
    assert u.indices == (0,) and u.values.shape == (res.trajectory.steps, 1)
    y_update = replay[:-1, 1] + 1e-3 * m.field.compiled(replay[:-1].T)[1]
    assert np.array_equal(replay[1:, 1], y_update)


def test_extracted_control_lands_near_target(slow_hit):
    m, s, target, res = slow_hit
    u = extract_control(m, res.trajectory, 1e-3)
    ver = verify_control(m, [0.0, 0.0], u, target)
    assert ver.distance <= 2 * target.radius
    assert ver.T == pytest.approx(res.T)


def test_zero_noise_control_vanishes_when_grad_x_H_is_zero():
    # x' = 1, y' = 0 with H = y: without noise the x-update is exactly Euler's
    _, y = variables(("x", "y"))
    m = ModelSpec("drift", ("x", "y"), VectorField.of([Const(1), ZERO]), y, control_indices=(0,))
    s = build_sde(m, GFamily.linear(1.0))
    tr = integrate(s, [0.0, 0.5], 1e-2, 50, increments=np.zeros((50, 1)))
    u = extract_control(m, tr)
    assert np.max(np.abs(u.values)) <= 1e-12


def test_zero_control_with_zero_field_stays_put():
    m = ModelSpec("still", ("x", "y"), VectorField.of([ZERO, ZERO]), Const(1), control_indices=(0,))
    u = ControlSignal(np.linspace(0, 1, 11), np.zeros((10, 1)), (0,), 0.1)
    ver = verify_control(m, [0.3, -0.2], u, TargetSet((0.3, -0.2), 0.1), ode_dt=0.025)
    assert np.array_equal(ver.terminal, [0.3, -0.2]) and ver.hit
    with pytest.raises(ValueError):
        verify_control(m, [0.0, 0.0], u, TargetSet((0.0, 0.0), 0.1), ode_dt=0.2)


def test_steer_slow_model():
    m = build_slow()
    res = steer(m, SLOW_G, [0.0, 0.0], [0.0, 5.0], 0.5, seed=1)
    assert res.success
    assert res.verification.distance <= 0.5 and res.T >= 4.5
    assert res.T >= 5.0 - 2 * 0.5


def test_steer_to_start_gives_empty_control():
    for m in (build_harmonic_pair(), build_trap()):
        z = np.ones(m.N)
        res = steer(m, None, z, z, 0.1)
        assert res.success and res.T == 0.0 and res.control.steps == 0


def test_trap_steering_fails_with_certificate():
    m = build_trap()
    res = steer(m, None, [0.0, 3.0], [0.0, 0.0], 0.25, budget=2, dt=2e-3, max_time=10, attempts=32)
    assert not res.success
    assert res.trap is not None and res.trap["holds"]
    assert any("trap certificate" in w for w in res.warnings)
    assert all(r["verdict"] == "spans" for r in res.gates["rank"])
    with pytest.raises(SteerGateError):
        steer(m, None, [0.0, 3.0], [0.0, 0.0], 0.25, strict=True)


def test_strict_mode_rejects_deficient_model():
    m = build_harmonic_pair()
    with pytest.raises(SteerGateError):
        steer(m, None, np.zeros(4), np.ones(4), 0.1, strict=True)


def test_halving_dt_reduces_median_miss():
    m = build_slow()
    s = build_sde(m, GFamily.linear(0.5))
    target = TargetSet((1.0, 1.0), 0.25)
    medians = []
    for dt in (1e-2, 5e-3):
        miss = []
        for seed in range(20):
            res = find_hitting_path(s, [0.0, 0.0], target, dt, 20_000, 64, seed)
            u = extract_control(m, res.trajectory, dt)
            ver = verify_control(m, [0.0, 0.0], u, target)
            miss.append(np.linalg.norm(ver.terminal - res.trajectory.states[-1]))
        medians.append(np.median(miss))
    assert medians[1] < medians[0]


def test_mollify_preserves_mean_and_smooths():
    vals = np.zeros((10, 1))
    vals[5:] = 1.0
    u = ControlSignal(np.arange(11) * 0.1, vals, (0,), 0.1)
    sm = mollify(u, refine=8)
    assert sm.dt == pytest.approx(0.1 / 8) and sm.steps == 80
    assert sm.T == pytest.approx(u.T)
    assert np.max(np.abs(np.diff(sm.values[:, 0]))) < 0.5
    assert sm.values.mean() == pytest.approx(vals.mean(), abs=1e-12)
    assert np.all((sm.values >= 0) & (sm.values <= 1))


def test_control_csv_round_trip(tmp_path):
    u = ControlSignal(np.arange(6) * 0.2, np.random.default_rng(0).standard_normal((5, 2)), (1, 3), 0.2)
    u.to_csv(tmp_path / "u.csv")
    back = ControlSignal.from_csv(tmp_path / "u.csv", (1, 3), 0.2)
    assert np.array_equal(back.values, u.values) and np.array_equal(back.t, u.t)
    with pytest.raises(ValueError):
        ControlSignal(np.arange(3.0), np.array([[np.inf], [0.0]]), (0,), 1.0)
