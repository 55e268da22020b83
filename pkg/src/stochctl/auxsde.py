"""The auxiliary Ito SDE attached to a conservative control system.

For a model with conserved ``H`` and coordinate split ``z = (x, y)`` along
``E`` and its complement, and a tempering function ``g``::

    dx = f_x dt - 3 g'(H) exp(-2 g(H)) grad_x H dt + sqrt(2) exp(-g(H)) dw
    dy = f_y dt

It is integrated with explicit Euler-Maruyama on a uniform mesh; every
Gaussian increment is retained so the path can be turned into a control.

Random streams: path ``p`` under seed ``s`` draws from
``numpy.random.default_rng(SeedSequence(entropy=s, spawn_key=(p,)))``, in
blocks of :data:`NOISE_CHUNK` rows of ``n`` standard normals scaled by
``sqrt(dt)``. The same path therefore sees the same increments whether it is
run alone or inside a batch.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .expr import (
    ZERO,
    CompiledExprs,
    Const,
    Expr,
    Var,
    compile_exprs,
    differentiate,
    evaluate,
    exp,
    log as log_,
    simplify,
    substitute,
)
from .geometry import ModelError, ModelSpec, check_conserved

log = logging.getLogger(__name__)

NOISE_CHUNK = 1024
BLOWUP = 1e12


class NumericalBlowup(FloatingPointError):
    """A state coordinate became non-finite or exceeded the blow-up threshold."""

    def __init__(self, step: int, state, path: int | None = None):
        where = f" (path {path})" if path is not None else ""
        super().__init__(
            f"state left the finite range at step {step}{where}; "
            "reduce dt or check the growth condition on g"
        )
        self.step = step
        self.state = np.asarray(state)
        self.path = path


# -- tempering functions ---------------------------------------------------------


_H = Var(0, "h")


@dataclass(frozen=True, eq=False)
class GFamily:
    """Tempering function ``g`` on the energy axis.

    ``linear``: ``alpha * h``; ``logarithmic``: ``alpha * log(1 + h)`` (needs
    ``H > -1``); ``custom``: any expression in the single variable ``h``.
    Construction validates ``g(0) = 0`` and ``g' > 0`` on a grid over
    ``[0, h_max]``.
    """

    kind: str = "linear"
    alpha: float = 1.0
    custom: Expr | None = None
    h_max: float = 100.0

    def __post_init__(self):
        if self.kind in ("linear", "logarithmic"):
            if not self.alpha > 0:
                raise ValueError(f"alpha must be positive (g' > 0), got {self.alpha}")
        elif self.kind == "custom":
            if self.custom is None:
                raise ValueError("custom family needs an expression in h")
            if any(i != 0 for i in self.custom.variables()):
                raise ValueError("custom g must depend on the single variable h")
        else:
            raise ValueError(f"unknown g family {self.kind!r}")
        if abs(evaluate(self.g, [0.0])) > 1e-14:
            raise ValueError("g(0) must be 0")
        grid = np.linspace(0.0, self.h_max, 1001)
        dg = compile_exprs([self.dg], 1)(grid[None, :])[0]
        if not np.all(dg > 0):
            raise ValueError("g' must be strictly positive on [0, h_max]")

    @classmethod
    def linear(cls, alpha: float = 1.0) -> "GFamily":
        return cls("linear", alpha)

    @classmethod
    def logarithmic(cls, alpha: float = 1.0) -> "GFamily":
        return cls("logarithmic", alpha)

    @classmethod
    def from_expr(cls, g: Expr, h_max: float = 100.0) -> "GFamily":
        return cls("custom", 1.0, g, h_max)

    @cached_property
    def g(self) -> Expr:
        if self.kind == "linear":
            return simplify(Const(self.alpha) * _H)
        if self.kind == "logarithmic":
            return simplify(Const(self.alpha) * log_(1 + _H))
        return simplify(self.custom)

    @cached_property
    def dg(self) -> Expr:
        return differentiate(self.g, 0)

    def compose(self, H: Expr) -> tuple[Expr, Expr]:
        """``(g o H, g' o H)``."""
        return simplify(substitute(self.g, {0: H})), simplify(substitute(self.dg, {0: H}))

    def to_dict(self) -> dict:
        d = {"family": self.kind, "alpha": self.alpha}
        if self.kind == "custom":
            d["expr"] = str(self.custom)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GFamily":
        kind = d.get("family", "linear")
        if kind == "custom":
            from .expr import parse_expr

            return cls.from_expr(parse_expr(d["expr"], ["h"]), d.get("h_max", 100.0))
        return cls(kind, float(d.get("alpha", 1.0)))


@dataclass
class GrowthFit:
    """Grid validation of ``exp(-2 g(H)) Lap_x H <= C + H``.

    ``shell_max[i]`` is the largest slack ``exp(-2g(H)) Lap_x H - H`` over the
    sample directions at ``radii[i]``; ``C`` is the overall maximum clipped at
    zero. The fit is flagged when the largest slack sits on the outermost
    shell, i.e. the constant would keep growing with the grid.
    """

    C: float
    ok: bool
    radii: list[float]
    shell_max: list[float]
    message: str = ""


def laplacian_x(H: Expr, x_indices: Sequence[int]) -> Expr:
    return simplify(sum((differentiate(differentiate(H, i), i) for i in x_indices), ZERO))


def fit_growth_constant(
    m: ModelSpec,
    g: GFamily,
    radii: Sequence[float] = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
    directions: int = 64,
    seed: int = 0,
) -> GrowthFit:
    if m.H is None:
        raise ModelError(f"model {m.name!r} has no conserved quantity")
    gH, _ = g.compose(m.H)
    slack = simplify(exp(-2 * gH) * laplacian_x(m.H, m.x_indices) - m.H)
    fn = compile_exprs([slack], m.N)
    u = np.random.default_rng(seed).standard_normal((m.N, directions))
    u /= np.linalg.norm(u, axis=0)
    shell = []
    with np.errstate(over="ignore", invalid="ignore"):
        for r in radii:
            vals = fn(r * u)[0]
            vals = vals[np.isfinite(vals)]
            shell.append(float(vals.max()) if vals.size else float("-inf"))
    C = max(0.0, max(shell))
    ok = C == 0.0 or int(np.argmax(shell)) != len(shell) - 1
    msg = "" if ok else (
        f"growth condition fails on the sample grid for g = {g.kind}(alpha={g.alpha}); "
        "increase alpha or switch family"
    )
    return GrowthFit(C, ok, [float(r) for r in radii], shell, msg)


# -- the SDE -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SdeSystem:
    """Drift and diagonal noise of an SDE on the model's coordinates.

    Noise enters only the coordinates in ``noise_indices``, coordinate
    ``noise_indices[j]`` receiving ``amplitudes[j] * dw_j``.
    """

    model: ModelSpec
    g: GFamily | None
    drift: tuple[Expr, ...]
    noise_indices: tuple[int, ...]
    amplitudes: tuple[Expr, ...]
    H: Expr | None
    growth: GrowthFit | None = None
    kind: str = "auxiliary"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.model.N
        if len(self.drift) != N or len(self.amplitudes) != len(self.noise_indices):
            raise ModelError("drift/amplitude shapes do not match the model")
        for e in tuple(self.drift) + tuple(self.amplitudes):
            if any(i >= N for i in e.variables()):
                raise ModelError("SDE coefficient references a variable outside the model")

    @property
    def N(self) -> int:
        return self.model.N

    @property
    def n_noise(self) -> int:
        return len(self.noise_indices)

    @cached_property
    def kernel(self) -> CompiledExprs:
        """Evaluates drift (N rows), amplitudes (n rows) and H (1 row)."""
        return compile_exprs(
            tuple(self.drift) + tuple(self.amplitudes) + (self.H if self.H is not None else ZERO,),
            self.N,
        )

    def coefficients(self, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = self.kernel(np.asarray(z, dtype=float))
        N, n = self.N, self.n_noise
        return out[:N], out[N : N + n], out[-1]

    def diffusion_diagonal(self) -> dict[int, Expr]:
        """Diagonal of sigma sigma^T, keyed by coordinate."""
        return {i: simplify(a * a) for i, a in zip(self.noise_indices, self.amplitudes)}

    def to_dict(self) -> dict:
        names = self.model.variables
        return {
            "kind": self.kind,
            "model": self.model.name,
            "g": None if self.g is None else self.g.to_dict(),
            "drift": {names[i]: str(d) for i, d in enumerate(self.drift)},
            "amplitudes": {names[i]: str(a) for i, a in zip(self.noise_indices, self.amplitudes)},
            "growth_C": None if self.growth is None else self.growth.C,
        }


def build_sde(m: ModelSpec, g: GFamily | None = None, *, check: bool = True) -> SdeSystem:
    """Assemble the auxiliary SDE for ``m`` and tempering function ``g``.

    Models without a conserved quantity get the plain additive-noise SDE
    ``dx = f_x dt + sqrt(2) dw, dy = f_y dt`` (no invariant density is
    claimed for it).
    """
    g = g or GFamily.linear()
    x = m.x_indices
    sqrt2 = Const(math.sqrt(2.0))
    if m.H is None:
        drift = tuple(simplify(c) for c in m.field)
        return SdeSystem(m, None, drift, x, tuple(sqrt2 for _ in x), None, None, "additive")
    if check:
        res = check_conserved(m)
        if not res.passed:
            raise ModelError(
                f"H is not conserved by f for model {m.name!r} (max residual {res.max_abs:.3g})"
            )
    gH, dgH = g.compose(m.H)
    corr = simplify(3 * dgH * exp(-2 * gH))
    drift = []
    xs = set(x)
    for i, fi in enumerate(m.field):
        if i in xs:
            drift.append(simplify(fi - corr * differentiate(m.H, i)))
        else:
            drift.append(simplify(fi))
    amp = simplify(sqrt2 * exp(-gH))
    growth = fit_growth_constant(m, g)
    if not growth.ok:
        log.warning(growth.message)
    return SdeSystem(m, g, tuple(drift), x, tuple(amp for _ in x), simplify(m.H), growth, "auxiliary")


# -- noise -----------------------------------------------------------------------


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Independent stream for Monte-Carlo path ``path`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path),)))


class NoiseSource:
    """Blocked Gaussian increments for a set of paths; yields arrays (n, B)."""

    def __init__(self, seed: int, paths: Sequence[int], n: int, dt: float):
        self.seed = int(seed)
        self.paths = list(paths)
        self.n = n
        self.scale = math.sqrt(dt)
        self._gens = [path_rng(seed, p) for p in self.paths]
        self._buf = None
        self._pos = NOISE_CHUNK

    def _refill(self):
        block = np.stack([g.standard_normal((NOISE_CHUNK, self.n)) for g in self._gens])
        self._buf = block * self.scale  # (B, chunk, n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= NOISE_CHUNK:
            self._refill()
        out = self._buf[:, self._pos, :].T
        self._pos += 1
        return out

    def keep(self, mask: np.ndarray) -> None:
        """Drop the paths where ``mask`` is False."""
        mask = np.asarray(mask, dtype=bool)
        self.paths = [p for p, k in zip(self.paths, mask) if k]
        self._gens = [g for g, k in zip(self._gens, mask) if k]
        if self._buf is not None:
            self._buf = self._buf[mask]


_NOISE_MAGIC = b"SCNR"
_NOISE_HEADER = struct.Struct("<4sIqqqId")


@dataclass
class NoiseRecord:
    """Seed, path index and the increments ``dw_k`` (shape (K, n)).

    Binary sidecar layout (little-endian): magic ``b"SCNR"``, uint32 version
    (1), int64 seed, int64 path, int64 steps K, uint32 n, float64 dt, then
    K*n float64 increments in row-major order.
    """

    seed: int
    path: int
    dt: float
    increments: np.ndarray

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @classmethod
    def generate(cls, seed: int, path: int, dt: float, steps: int, n: int) -> "NoiseRecord":
        src = NoiseSource(seed, [path], n, dt)
        inc = np.empty((steps, n))
        for k in range(steps):
            inc[k] = src.next()[:, 0]
        return cls(seed, path, dt, inc)

    def regenerate(self) -> "NoiseRecord":
        return NoiseRecord.generate(self.seed, self.path, self.dt, self.steps, self.increments.shape[1])

    def save(self, path) -> None:
        inc = np.ascontiguousarray(self.increments, dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(_NOISE_HEADER.pack(_NOISE_MAGIC, 1, self.seed, self.path, inc.shape[0], inc.shape[1], self.dt))
            fh.write(inc.tobytes())

    @classmethod
    def load(cls, path) -> "NoiseRecord":
        data = Path(path).read_bytes()
        magic, version, seed, p, steps, n, dt = _NOISE_HEADER.unpack_from(data)
        if magic != _NOISE_MAGIC or version != 1:
            raise ValueError(f"{path}: not a noise record (version 1)")
        inc = np.frombuffer(data, dtype="<f8", offset=_NOISE_HEADER.size, count=steps * n)
        return cls(seed, p, dt, inc.reshape(steps, n).astype(float))


# -- trajectories ----------------------------------------------------------------


@dataclass
class Trajectory:
    """States ``z_0..z_K`` on the uniform mesh ``t_k = t0 + k dt``."""

    t: np.ndarray
    states: np.ndarray
    H: np.ndarray | None
    noise: NoiseRecord | None
    noise_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.t) != len(self.states):
            raise ValueError("mesh and states differ in length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("time mesh must be strictly increasing")

    @property
    def steps(self) -> int:
        return len(self.t) - 1

    @property
    def dt(self) -> float:
        if self.steps < 1:
            return float("nan")
        return float((self.t[-1] - self.t[0]) / self.steps)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def truncate(self, k: int) -> "Trajectory":
        noise = None
        if self.noise is not None:
            noise = NoiseRecord(self.noise.seed, self.noise.path, self.noise.dt, self.noise.increments[:k])
        H = None if self.H is None else self.H[: k + 1]
        return Trajectory(self.t[: k + 1], self.states[: k + 1], H, noise, self.noise_indices)

    def to_csv(self, path, names: Sequence[str]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names, "H"])
            for k in range(len(self.t)):
                h = "" if self.H is None else repr(float(self.H[k]))
                w.writerow([repr(float(self.t[k])), *(repr(float(v)) for v in self.states[k]), h])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = rows[1:]
        t = np.array([float(r[0]) for r in body])
        states = np.array([[float(v) for v in r[1:-1]] for r in body])
        H = None if body and body[0][-1] == "" else np.array([float(r[-1]) for r in body])
        return cls(t, states, H, None)


def _check_finite(z: np.ndarray, step: int, paths=None) -> None:
    ok = np.abs(z) <= BLOWUP
    if not ok.all():
        bad = np.argwhere(~ok.all(axis=0))[0][0] if z.ndim == 2 else 0
        p = None if paths is None else paths[bad]
        raise NumericalBlowup(step, z[:, bad] if z.ndim == 2 else z, p)


def integrate(
    s: SdeSystem,
    z0: Sequence[float],
    dt: float,
    steps: int,
    seed: int = 0,
    *,
    path: int = 0,
    increments: np.ndarray | None = None,
    stop: Callable[[np.ndarray], bool] | None = None,
) -> Trajectory:
    """Euler-Maruyama: ``z_{k+1} = z_k + drift(z_k) dt + amp(z_k) dw_k`` (noise on E only).

    ``increments`` (shape (steps, n)) overrides the random stream; pass zeros
    for the noise-free scheme. ``stop(z)`` ends the run after the first step
    where it returns True.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z0, dtype=float).reshape(s.N, 1).copy()
    if not np.all(np.isfinite(z)):
        raise ValueError("initial state must be finite")
    N, n = s.N, s.n_noise
    xi = list(s.noise_indices)
    kernel = s.kernel._kernel
    buf = np.empty((N + n + 1, 1))
    states = np.empty((steps + 1, N))
    Hs = np.empty(steps + 1)
    inc = np.empty((steps, n))
    states[0] = z[:, 0]
    src = None
    if increments is None:
        src = NoiseSource(seed, [path], n, dt)
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (steps, n):
            raise ValueError(f"increments must have shape {(steps, n)}")
    last = steps
    with np.errstate(all="ignore"):
        for k in range(steps):
            kernel(z, buf)
            dw = src.next() if src is not None else increments[k].reshape(n, 1)
            Hs[k] = buf[-1, 0]
            znew = z + buf[:N] * dt
            znew[xi] = znew[xi] + buf[N : N + n] * dw
            _check_finite(znew, k + 1, [path])
            z = znew
            states[k + 1] = z[:, 0]
            inc[k] = dw[:, 0]
            if stop is not None and stop(z[:, 0]):
                last = k + 1
                break
        kernel(z, buf)
        Hs[last] = buf[-1, 0]
    t = np.arange(last + 1) * dt
    noise = NoiseRecord(seed, path, dt, inc[:last].copy())
    return Trajectory(t, states[: last + 1].copy(), Hs[: last + 1].copy() if s.H is not None else None, noise, s.noise_indices)


def run_batch(
    s: SdeSystem,
    z0,
    dt: float,
    steps: int,
    seed: int,
    paths: Sequence[int],
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Advance paths ``paths`` together; yields ``(k, z_k, H_k)`` for k = 0..steps.

    ``z0`` is shape (N,) (shared) or (N, B). The generator's ``send`` is not
    used; consumers may stop iterating at any time.
    """
    B = len(paths)
    z = np.asarray(z0, dtype=float)
    z = np.repeat(z.reshape(s.N, 1), B, axis=1) if z.ndim == 1 else z.copy()
    N, n = s.N, s.n_noise
    xi = list(s.noise_indices)
    kernel = s.kernel._kernel
    buf = np.empty((N + n + 1, B))
    src = NoiseSource(seed, paths, n, dt)
    with np.errstate(all="ignore"):
        for k in range(steps):
            kernel(z, buf)
            yield k, z, buf[-1].copy()
            dw = src.next()
            znew = z + buf[:N] * dt
            znew[xi] = znew[xi] + buf[N : N + n] * dw
            _check_finite(znew, k + 1, list(paths))
            z = znew
        kernel(z, buf)
    yield steps, z, buf[-1].copy()


# -- a-priori energy bound -------------------------------------------------------


@dataclass
class EnergyBoundReport:
    times: list[float]
    mean_H: list[float]
    std_err: list[float]
    bound: list[float]
    C: float
    H0: float
    paths: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def energy_bound_check(
    s: SdeSystem,
    z0: Sequence[float],
    t_end: float,
    paths: int,
    dt: float,
    seed: int = 0,
    checkpoints: int = 10,
) -> EnergyBoundReport:
    """Monte-Carlo ``E H_t`` against ``H_0 e^t + C (e^t - 1)`` (+3 standard errors)."""
    if s.H is None or s.growth is None:
        raise ModelError("energy bound needs a tempered SDE with a conserved quantity")
    steps = int(round(t_end / dt))
    marks = {int(round(steps * (j + 1) / checkpoints)) for j in range(checkpoints)}
    C = s.growth.C
    H0 = float(evaluate(s.H, z0))
    times, means, ses, bounds = [], [], [], []
    for k, _, H in run_batch(s, z0, dt, steps, seed, range(paths)):
        if k in marks:
            t = k * dt
            times.append(t)
            means.append(float(H.mean()))
            ses.append(float(H.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0)
            bounds.append(H0 * math.exp(t) + C * (math.exp(t) - 1.0))
    passed = all(m <= b + 3 * se for m, b, se in zip(means, bounds, ses))
    return EnergyBoundReport(times, means, ses, bounds, C, H0, paths, passed)
