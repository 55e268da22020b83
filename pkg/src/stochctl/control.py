"""Open-loop steering through the auxiliary SDE.

A noise path of the auxiliary SDE that enters a target ball is turned into a
piecewise-constant control: on each mesh interval the non-``f`` part of the
discrete x-update becomes ``u_k``. Forward Euler of ``z' = f(z) + u`` then
reproduces the discrete path, and a fourth-order re-integration checks the
endpoint.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .auxsde import (
    GFamily,
    NoiseSource,
    NumericalBlowup,
    SdeSystem,
    Trajectory,
    build_sde,
    integrate,
    BLOWUP,
)
from .expr import compile_exprs, simplify
from .geometry import (
    ModelError,
    ModelSpec,
    check_conserved,
    check_divergence_free,
    hormander_scan,
)

log = logging.getLogger(__name__)


class SteerGateError(ModelError):
    """An assumption gate failed and steering ran in strict mode."""


@dataclass(frozen=True)
class TargetSet:
    """Closed Euclidean ball ``|z - center| <= radius``."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise ValueError("target radius must be positive")

    def distance(self, z) -> np.ndarray:
        """Distance to the centre; ``z`` of shape (N,) or (N, B)."""
        z = np.asarray(z, dtype=float)
        c = np.asarray(self.center).reshape((-1,) + (1,) * (z.ndim - 1))
        return np.sqrt(np.sum((z - c) ** 2, axis=0))

    def contains(self, z) -> bool | np.ndarray:
        return self.distance(z) <= self.radius

    def shrink(self, factor: float) -> "TargetSet":
        return TargetSet(self.center, self.radius * factor)


# -- hitting search --------------------------------------------------------------


@dataclass
class HittingResult:
    hit: bool
    T: float | None
    trajectory: Trajectory | None
    attempts: int
    attempt_index: int | None = None
    closest: float = math.inf
    closest_time: float | None = None
    closest_attempt: int | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "hit": self.hit, "T": self.T, "attempts": self.attempts, "attempt_index": self.attempt_index,
            "closest_distance": self.closest, "closest_time": self.closest_time,
            "closest_attempt": self.closest_attempt, "warnings": list(self.warnings),
        }


def step_scale(s: SdeSystem, z0, dt: float) -> float:
    """Typical one-step displacement at ``z0``: ``|drift| dt + |amp| sqrt(n dt)``."""
    drift, amp, _ = s.coefficients(np.asarray(z0, dtype=float).reshape(s.N, 1))
    return float(np.linalg.norm(drift[:, 0]) * dt + np.linalg.norm(amp[:, 0]) * math.sqrt(dt))


def find_hitting_path(
    s: SdeSystem,
    z0: Sequence[float],
    target: TargetSet,
    dt: float = 1e-3,
    max_steps: int = 100_000,
    max_attempts: int = 256,
    seed: int = 0,
    *,
    batch: int = 256,
    first_attempt: int = 0,
) -> HittingResult:
    """Independent restarts from ``z0``; attempt ``a`` uses noise path ``first_attempt + a``.

    The lowest attempt index that enters the target within ``max_steps``
    wins, regardless of wall-clock order. Its path is re-run alone and
    truncated at the first mesh point inside the target.
    """
    z0 = np.asarray(z0, dtype=float)
    warnings = []
    if target.contains(z0):
        traj = Trajectory(np.zeros(1), z0.reshape(1, -1).copy(), None, None, s.noise_indices)
        return HittingResult(True, 0.0, traj, 0, None, float(target.distance(z0)), 0.0, None)
    scale = step_scale(s, z0, dt)
    if target.radius < 10 * scale:
        warnings.append(
            f"target radius {target.radius:g} is below 10x the one-step displacement {scale:.3g}; "
            "hits may be missed between mesh points"
        )
    N, n = s.N, s.n_noise
    xi = list(s.noise_indices)
    kernel = s.kernel._kernel
    closest, closest_t, closest_a = math.inf, None, None
    winner = None
    done = 0
    while done < max_attempts and winner is None:
        ids = np.arange(done, min(max_attempts, done + batch))
        src = NoiseSource(seed, [first_attempt + a for a in ids], n, dt)
        z = np.repeat(z0.reshape(N, 1), len(ids), axis=1)
        buf = np.empty((N + n + 1, len(ids)))
        best = None
        with np.errstate(all="ignore"):
            for k in range(1, max_steps + 1):
                kernel(z, buf)
                dw = src.next()
                znew = z + buf[:N] * dt
                znew[xi] = znew[xi] + buf[N : N + n] * dw
                bad = ~np.all(np.abs(znew) <= BLOWUP, axis=0)
                if bad.any():
                    j = int(np.argmax(bad))
                    raise NumericalBlowup(k, znew[:, j], first_attempt + int(ids[j]))
                z = znew
                d = target.distance(z)
                j = int(np.argmin(d))
                if d[j] < closest:
                    closest, closest_t, closest_a = float(d[j]), k * dt, int(ids[j])
                inside = d <= target.radius
                if inside.any():
                    hit_ids = ids[inside]
                    cand = int(hit_ids.min())
                    best = cand if best is None else min(best, cand)
                    keep = (ids < best) & ~inside
                    if not keep.any():
                        break
                    ids, z = ids[keep], z[:, keep]
                    src.keep(keep)
                    buf = np.empty((N + n + 1, len(ids)))
        done = int(min(max_attempts, done + batch))
        winner = best
    if winner is None:
        return HittingResult(False, None, None, done, None, closest, closest_t, closest_a, warnings)
    traj = integrate(s, z0, dt, max_steps, seed, path=first_attempt + winner, stop=lambda zz: bool(target.contains(zz)))
    if not target.contains(traj.states[-1]):
        raise RuntimeError("batched and single-path integration disagree on the hitting path")
    return HittingResult(True, traj.duration, traj, winner + 1, winner, min(closest, float(target.distance(traj.states[-1]))),
                         closest_t, closest_a, warnings)


# -- controls ------------------------------------------------------------------------


@dataclass
class ControlSignal:
    """Piecewise-constant control: ``u(t) = values[k]`` on ``[t_k, t_{k+1})``."""

    t: np.ndarray
    values: np.ndarray
    indices: tuple[int, ...]
    dt: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.t) - 1 if len(self.t) else 0, len(self.indices))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("control mesh must be strictly increasing")

    @property
    def steps(self) -> int:
        return len(self.values)

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    @classmethod
    def empty(cls, indices: Sequence[int]) -> "ControlSignal":
        return cls(np.zeros(1), np.zeros((0, len(indices))), tuple(indices), 0.0)

    def to_csv(self, path, names: Sequence[str] | None = None) -> None:
        names = names or [f"u{i+1}" for i in range(len(self.indices))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names])
            for k in range(self.steps):
                w.writerow([repr(float(self.t[k])), *(repr(float(v)) for v in self.values[k])])
            w.writerow([repr(float(self.t[-1])), *([""] * len(self.indices))])

    @classmethod
    def from_csv(cls, path, indices: Sequence[int], dt: float) -> "ControlSignal":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        t = np.array([float(r[0]) for r in rows])
        vals = np.array([[float(v) for v in r[1:]] for r in rows[:-1]]).reshape(len(rows) - 1, len(indices))
        return cls(t, vals, tuple(indices), dt)


def _field_kernel(m: ModelSpec):
    return compile_exprs([simplify(c) for c in m.field], m.N)


def extract_control(m: ModelSpec, traj: Trajectory, dt: float | None = None) -> ControlSignal:
    """``u_k = (x_{k+1} - x_k) / dt - f_x(z_k)`` on every mesh interval."""
    x = list(m.x_indices)
    if dt is None:
        dt = traj.noise.dt if traj.noise is not None else traj.dt
    if traj.steps == 0:
        return ControlSignal(traj.t[:1].copy(), np.zeros((0, len(x))), tuple(x), dt)
    if not np.allclose(np.diff(traj.t), dt, rtol=1e-9, atol=0):
        raise ValueError("trajectory mesh does not match the step size")
    Z = traj.states
    f = _field_kernel(m)(Z[:-1].T)
    u = (Z[1:, x] - Z[:-1, x]) / dt - f[x].T
    return ControlSignal(traj.t.copy(), u, tuple(x), dt)


def replay_euler(m: ModelSpec, z0: Sequence[float], u: ControlSignal) -> np.ndarray:
    """Forward Euler of ``z' = f(z) + u``: returns states ``z_0..z_K``."""
    x = list(u.indices)
    kernel = _field_kernel(m)._kernel
    z = np.asarray(z0, dtype=float).reshape(m.N, 1).copy()
    out = np.empty((u.steps + 1, m.N))
    out[0] = z[:, 0]
    buf = np.empty((m.N, 1))
    with np.errstate(all="ignore"):
        for k in range(u.steps):
            kernel(z, buf)
            znew = z + buf * u.dt
            znew[x, 0] = z[x, 0] + u.dt * (buf[x, 0] + u.values[k])
            z = znew
            out[k + 1] = z[:, 0]
    return out


@dataclass
class Verification:
    terminal: np.ndarray
    distance: float
    radius: float
    T: float
    ode_dt: float

    @property
    def hit(self) -> bool:
        return self.distance <= self.radius

    def to_dict(self) -> dict:
        return {"terminal": self.terminal.tolist(), "distance": self.distance, "radius": self.radius,
                "hit": self.hit, "T": self.T, "ode_dt": self.ode_dt}


def verify_control(
    m: ModelSpec, z0: Sequence[float], u: ControlSignal, target: TargetSet, ode_dt: float | None = None
) -> Verification:
    """RK4 of ``z' = f(z) + u(t)`` with ``u`` frozen on each control interval."""
    z = np.asarray(z0, dtype=float).reshape(m.N, 1).copy()
    if u.steps == 0:
        return Verification(z[:, 0], float(target.distance(z[:, 0])), target.radius, 0.0, 0.0)
    ode_dt = u.dt if ode_dt is None else ode_dt
    if ode_dt > u.dt * (1 + 1e-12):
        raise ValueError("ode_dt must not exceed the control mesh step")
    sub = int(math.ceil(u.dt / ode_dt - 1e-9))
    h = u.dt / sub
    kernel = _field_kernel(m)._kernel
    x = list(u.indices)
    buf = np.empty((m.N, 1))
    uk = np.zeros((m.N, 1))

    def rhs(zz):
        kernel(zz, buf)
        return buf + uk

    with np.errstate(all="ignore"):
        for k in range(u.steps):
            uk[x, 0] = u.values[k]
            for _ in range(sub):
                k1 = rhs(z)
                k2 = rhs(z + 0.5 * h * k1)
                k3 = rhs(z + 0.5 * h * k2)
                k4 = rhs(z + h * k3)
                z = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.abs(z) <= BLOWUP):
                raise NumericalBlowup(k + 1, z[:, 0])
    return Verification(z[:, 0].copy(), float(target.distance(z[:, 0])), target.radius, u.T, h)


def mollify(u: ControlSignal, refine: int = 8) -> ControlSignal:
    """Convolve with the standard bump of half-width one mesh step.

    The result is sampled on a mesh ``refine`` times finer; values beyond the
    signal's ends are taken from the end intervals.
    """
    if u.steps == 0:
        return u
    h = u.dt / refine
    fine = np.repeat(u.values, refine, axis=0)
    s = np.arange(-refine + 1, refine) / refine
    ker = np.exp(-1.0 / (1.0 - s**2))
    ker /= ker.sum()
    pad = refine - 1
    padded = np.concatenate([np.repeat(fine[:1], pad, 0), fine, np.repeat(fine[-1:], pad, 0)])
    out = np.stack([np.convolve(padded[:, j], ker, mode="valid") for j in range(fine.shape[1])], axis=1)
    t = u.t[0] + h * np.arange(len(out) + 1)
    return ControlSignal(t, out, u.indices, h)


# -- steering ------------------------------------------------------------------------


@dataclass
class SteerResult:
    success: bool
    control: ControlSignal | None
    verification: Verification | None
    hitting: HittingResult | None
    rounds: list[dict]
    warnings: list[str]
    gates: dict
    trap: dict | None = None

    @property
    def T(self) -> float | None:
        return None if self.control is None else self.control.T

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "T": self.T,
            "verification": None if self.verification is None else self.verification.to_dict(),
            "rounds": self.rounds,
            "warnings": self.warnings,
            "gates": self.gates,
            "trap_certificate": self.trap,
        }


def assumption_gates(m: ModelSpec, points: Sequence[Sequence[float]], n_random: int = 5, seed: int = 0) -> tuple[dict, list[str]]:
    """Conservation, divergence and rank at the given points plus random ones."""
    problems = []
    cons = check_conserved(m)
    div = check_divergence_free(m.field)
    if cons.verdict == "fail":
        problems.append("H is not conserved by f")
    if cons.verdict == "not-applicable":
        problems.append(f"model {m.name!r} has no conserved quantity")
    if not div.passed:
        problems.append("f is not divergence-free")
    reports = hormander_scan(m, [np.asarray(p, float) for p in points], n_random=n_random, seed=seed)
    bad = [r for r in reports if r.verdict != "spans"]
    if bad:
        problems.append(f"bracket condition not verified at {len(bad)} of {len(reports)} points ({bad[0].verdict})")
    gates = {
        "conserved": cons.verdict,
        "divergence_free": div.verdict,
        "rank": [{"point": list(r.point), "rank": r.rank, "verdict": r.verdict} for r in reports],
    }
    return gates, problems


def steer(
    m: ModelSpec,
    g: GFamily | None,
    z0: Sequence[float],
    z1: Sequence[float],
    eps: float,
    budget: int = 3,
    *,
    dt: float = 1e-3,
    max_time: float = 100.0,
    attempts: int = 256,
    seed: int = 0,
    strict: bool = False,
) -> SteerResult:
    """Find a control steering ``z0`` into ``B(z1, eps)``.

    Each round searches for an SDE path hitting ``B(z1, eps/2)`` within
    ``max_time``, extracts its control and verifies it by RK4 against
    ``B(z1, eps)``. A failed round halves ``dt``; at most ``budget`` rounds
    run, each on fresh noise paths. Assumption gates are advisory unless
    ``strict`` is set.
    """
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    if z0.shape != (m.N,) or z1.shape != (m.N,):
        raise ValueError(f"z0 and z1 must have {m.N} coordinates")
    target = TargetSet(tuple(z1), eps)
    gates, warnings = assumption_gates(m, [z0, z1], seed=seed)
    if warnings and strict:
        raise SteerGateError("; ".join(warnings))
    for w in warnings:
        log.warning(w)
    trap = None
    if m.flags.get("trap"):
        from .models import trap_certificate

        cert = trap_certificate(m)
        trap = cert.to_dict()
        trap["message"] = cert.describe()
        warnings.append(cert.describe())
    if np.array_equal(z0, z1):
        empty = ControlSignal.empty(m.x_indices)
        ver = verify_control(m, z0, empty, target)
        return SteerResult(True, empty, ver, None, [], warnings, gates, trap)
    s = build_sde(m, g)
    rounds = []
    best = None
    h = dt
    for r in range(budget):
        steps = int(math.ceil(max_time / h))
        res = find_hitting_path(s, z0, target.shrink(0.5), h, steps, attempts, seed, first_attempt=r * attempts)
        info = {"round": r, "dt": h, "hitting": res.to_dict()}
        warnings.extend(w for w in res.warnings if w not in warnings)
        if res.hit:
            u = extract_control(m, res.trajectory, h)
            ver = verify_control(m, z0, u, target)
            info["verification"] = ver.to_dict()
            rounds.append(info)
            if best is None or ver.distance < best[1].distance:
                best = (u, ver, res)
            if ver.hit:
                return SteerResult(True, u, ver, res, rounds, warnings, gates, trap)
        else:
            rounds.append(info)
        h /= 2
    if best is None:
        return SteerResult(False, None, None, None, rounds, warnings, gates, trap)
    return SteerResult(False, best[0], best[1], best[2], rounds, warnings, gates, trap)
