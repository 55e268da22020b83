"""The tempered invariant density, the adjoint-generator identity and
empirical stationarity diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .auxsde import SdeSystem, integrate, run_batch
from .expr import ZERO, Const, Expr, compile_exprs, differentiate, exp, parse_expr, simplify
from .geometry import CHECK_POINTS, ModelError, sample_points

ADJOINT_TOL = 1e-8
DEFAULT_BATCHES = 20
DEFAULT_ALLOWANCE = 0.02
TAIL = 1e-10
_GL_ORDER = 16


# -- density ---------------------------------------------------------------------


def density_expr(s: SdeSystem) -> Expr:
    """``exp(-g(H))`` for the auxiliary SDE, ``exp(-H/T)`` for an equal-temperature chain."""
    if s.kind == "auxiliary":
        gH, _ = s.g.compose(s.H)
        return simplify(exp(-gH))
    if s.kind == "chain":
        temps = s.meta.get("T", [])
        if len(set(temps)) != 1:
            raise ModelError("the Gibbs density exp(-H/T) needs equal bath temperatures")
        return simplify(exp(-s.H / temps[0]))
    raise ModelError(f"no invariant density is known for an SDE of kind {s.kind!r}")


def _gl_nodes(lo: float, hi: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass
class InvariantDensity:
    """Unnormalised density with optional normalisation by quadrature.

    ``Z`` (with error estimate ``Z_err = |Z_2P - Z_P|`` from ``P`` and ``2P``
    composite Gauss-Legendre panels per axis) is computed in dimension at
    most 3 over the cube ``[-R, R]^N`` outside of which the density is below
    ``1e-10`` times its peak along sampled rays; higher dimensions carry no Z.
    """

    system: SdeSystem
    expr: Expr
    Z: float | None = None
    Z_err: float | None = None
    radius: float | None = None
    panels: int = 8

    @classmethod
    def of(cls, s: SdeSystem, panels: int | None = None, normalise: bool = True) -> "InvariantDensity":
        d = cls(s, density_expr(s))
        if normalise and s.N <= 3:
            d.panels = panels or {1: 16, 2: 8, 3: 3}[s.N]
            d.radius = d._box_radius()
            z1 = d.integrate_fns([], d.panels)[0]
            z2 = d.integrate_fns([], 2 * d.panels)[0]
            d.Z, d.Z_err = float(z2), float(abs(z2 - z1))
        return d

    @property
    def N(self) -> int:
        return self.system.N

    def __call__(self, z) -> np.ndarray:
        return compile_exprs([self.expr], self.N)(np.asarray(z, dtype=float))[0]

    def _box_radius(self, directions: int = 64, seed: int = 0) -> float:
        fn = compile_exprs([self.expr], self.N)
        u = np.random.default_rng(seed).standard_normal((self.N, directions))
        u = np.concatenate([u / np.linalg.norm(u, axis=0), np.eye(self.N), -np.eye(self.N)], axis=1)
        peak_pts = np.concatenate([np.zeros((self.N, 1))] + [r * u for r in (0.5, 1.0, 2.0)], axis=1)
        with np.errstate(all="ignore"):
            peak = float(np.nanmax(fn(peak_pts)))
            r = 1.0
            while r < 1e4:
                vals = fn(r * u)[0]
                if np.all(vals < TAIL * peak):
                    return r
                r *= 1.25
        raise ModelError("density does not decay along sampled rays; no quadrature box")

    def integrate_fns(self, fns: Sequence[Expr], panels: int) -> np.ndarray:
        """``[int rho, int phi_1 rho, ...]`` over the truncation box."""
        R = self.radius
        x, w = _gl_nodes(-R, R, panels)
        grids = np.meshgrid(*([x] * self.N), indexing="ij")
        W = np.ones_like(grids[0])
        for g_ in np.meshgrid(*([w] * self.N), indexing="ij"):
            W = W * g_
        pts = np.stack([g_.ravel() for g_ in grids])
        vals = compile_exprs([self.expr, *[simplify(f * self.expr) for f in fns]], self.N)(pts)
        return vals @ W.ravel()

    def expectation(self, fns: Sequence[Expr]) -> list[float]:
        if self.Z is None:
            raise ModelError("expectations need a normalised density (dimension <= 3)")
        vals = self.integrate_fns(fns, 2 * self.panels)
        return [float(v / vals[0]) for v in vals[1:]]

    def to_dict(self) -> dict:
        return {"density": str(self.expr), "Z": self.Z, "Z_err": self.Z_err, "box_radius": self.radius, "panels": self.panels}


# -- adjoint generator -------------------------------------------------------------


def fokker_planck(s: SdeSystem, F: Expr) -> Expr:
    """``L* F = -sum_i d_i(b_i F) + 1/2 sum_j d_j^2(sigma_j^2 F)``."""
    terms = [-differentiate(simplify(b * F), i, simplified=False) for i, b in enumerate(s.drift) if not b == ZERO]
    for j, a2 in s.diffusion_diagonal().items():
        terms.append(Const(0.5) * differentiate(differentiate(simplify(a2 * F), j), j, simplified=False))
    return simplify(sum(terms, ZERO))


def tempered_adjoint(s: SdeSystem, F: Expr) -> Expr:
    """Closed form of ``L* F`` for the auxiliary SDE:
    ``-div(f F) + div_x(grad_x H g'(H) e^{-2g(H)} F) + div_x(e^{-2g(H)} grad_x F)``."""
    if s.kind != "auxiliary":
        raise ModelError("the closed form applies to the tempered auxiliary SDE only")
    m = s.model
    gH, dgH = s.g.compose(s.H)
    e2 = exp(-2 * gH)
    terms = [-differentiate(simplify(fi * F), i, simplified=False) for i, fi in enumerate(m.field)]
    for i in m.x_indices:
        terms.append(differentiate(simplify(differentiate(s.H, i) * dgH * e2 * F), i, simplified=False))
        terms.append(differentiate(simplify(e2 * differentiate(F, i)), i, simplified=False))
    return simplify(sum(terms, ZERO))


@dataclass
class AdjointReport:
    residual: Expr
    method: str
    max_abs: float
    max_rel: float
    points: int
    tol: float
    cross_check: float | None = None

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.tol

    def to_dict(self) -> dict:
        text = str(self.residual)
        return {
            "residual": text if len(text) <= 2000 else text[:2000] + " ...",
            "method": self.method, "max_abs": self.max_abs, "max_rel": self.max_rel,
            "points": self.points, "tol": self.tol, "cross_check_max_abs": self.cross_check,
            "verdict": "pass" if self.passed else "fail",
        }


def adjoint_generator_residual(
    s: SdeSystem,
    density: Expr | None = None,
    points=None,
    tol: float = ADJOINT_TOL,
) -> AdjointReport:
    """``L* rho`` for ``rho`` the invariant density; max ``|L* rho|`` at the sample set.

    ``max_rel`` is the same maximum divided by ``rho``. For the auxiliary SDE
    the generic Fokker-Planck operator is cross-checked against the closed
    form on a non-invariant test function (``cross_check``).
    """
    rho = density if density is not None else density_expr(s)
    R = fokker_planck(s, rho)
    pts = sample_points(s.N) if points is None else np.asarray(points, dtype=float)
    if R == ZERO:
        return AdjointReport(R, "symbolic", 0.0, 0.0, 0, tol, _cross_check(s, pts))
    vals = compile_exprs([R, rho], s.N)(pts)
    max_abs = float(np.max(np.abs(vals[0])))
    max_rel = float(np.max(np.abs(vals[0] / vals[1])))
    return AdjointReport(R, "numeric", max_abs, max_rel, pts.shape[1], tol, _cross_check(s, pts))


def _cross_check(s: SdeSystem, pts) -> float | None:
    if s.kind != "auxiliary":
        return None
    zs = s.model.vars()
    test = simplify(exp(-sum((z * z for z in zs), ZERO) / 2) * (1 + zs[0] + zs[-1] * zs[0]))
    a, b = fokker_planck(s, test), tempered_adjoint(s, test)
    vals = compile_exprs([a, b], s.N)(pts)
    return float(np.max(np.abs(vals[0] - vals[1])))


# -- stationarity --------------------------------------------------------------------


@dataclass
class StationarityReport:
    test_functions: list[str]
    averages: list[float]
    std_errors: list[float]
    references: list[float]
    verdicts: list[str]
    batches: int
    burn_in: int
    run: int
    dt: float
    seed: int
    allowance: float

    @property
    def passed(self) -> bool:
        return all(v == "pass" for v in self.verdicts)

    @property
    def summary(self) -> str:
        if self.passed:
            return "consistent with unique invariant measure"
        return "time averages inconsistent with the invariant density at this run length"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["summary"] = self.summary
        d["verdict"] = "pass" if self.passed else "fail"
        return d


def batch_means(values: np.ndarray, batches: int = DEFAULT_BATCHES) -> tuple[float, float]:
    """Mean and batch-means standard error of a (correlated) series."""
    if batches < 2:
        raise ValueError("need at least two batches")
    n = len(values) // batches
    if n < 1:
        raise ValueError("series shorter than the batch count")
    means = values[: n * batches].reshape(batches, n).mean(axis=1)
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def stationarity_test(
    s: SdeSystem,
    test_fns: Sequence[Expr | str],
    burn_in: int | None = None,
    run: int = 1_000_000,
    dt: float = 1e-3,
    seed: int = 0,
    *,
    z0: Sequence[float] | None = None,
    references: Sequence[float] | None = None,
    batches: int = DEFAULT_BATCHES,
    allowance: float = DEFAULT_ALLOWANCE,
) -> StationarityReport:
    """Time averages of one long path after burn-in against the invariant density.

    Pass iff ``|average - reference| <= 3 SE + allowance |reference|`` for
    every test function. Burn-in defaults to 10% of ``run``.
    """
    names = s.model.variables
    fns = [parse_expr(f, names) if isinstance(f, str) else f for f in test_fns]
    burn = run // 10 if burn_in is None else int(burn_in)
    if references is None:
        references = InvariantDensity.of(s).expectation(fns)
    z0 = np.zeros(s.N) if z0 is None else z0
    tr = integrate(s, z0, dt, burn + run, seed)
    states = tr.states[burn + 1 :].T
    vals = compile_exprs(fns, s.N)(states) if fns else np.empty((0, run))
    avgs, ses, verdicts = [], [], []
    for v, ref in zip(vals, references):
        a, se = batch_means(v, batches)
        avgs.append(a)
        ses.append(se)
        verdicts.append("pass" if abs(a - ref) <= 3 * se + allowance * abs(ref) else "fail")
    return StationarityReport(
        [str(f) for f in fns], avgs, ses, [float(r) for r in references], verdicts,
        batches, burn, run, dt, seed, allowance,
    )


# -- kernel overlap diagnostic ---------------------------------------------------------


@dataclass
class OverlapReport:
    """Binned total-variation distance (in [0, 2]) between two time-t laws."""

    estimate: float
    ci: tuple[float, float]
    bins: int
    paths: int
    t: float
    label: str = "diagnostic only: binned TV underestimates the true TV distance"
    histograms: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    edges: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def width(self) -> float:
        return self.ci[1] - self.ci[0]

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "ci": list(self.ci), "bins": self.bins, "paths": self.paths, "t": self.t, "label": self.label}


def _tv(a: np.ndarray, b: np.ndarray, edges) -> tuple[float, np.ndarray, np.ndarray]:
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    return float(np.abs(ha / len(a) - hb / len(b)).sum()), ha, hb


def kernel_overlap(
    s: SdeSystem,
    z,
    z_other,
    t: float,
    paths: int = 1000,
    bins: int | None = None,
    seed: int = 0,
    dt: float = 1e-3,
    n_boot: int = 200,
    max_cells: int = 1_000_000,
) -> OverlapReport:
    """Estimate ``||P_t(z, .) - P_t(z', .)||_TV`` from two Monte-Carlo clouds.

    The clouds use paths ``0..paths-1`` and ``paths..2*paths-1`` of ``seed``.
    Both are binned on common edges spanning the pooled range, with
    ``ceil(paths^(1/3))`` bins per active coordinate (capped so the grid has
    at most ``max_cells`` cells).
    """
    if not t > 0:
        raise ValueError("t must be positive")
    steps = max(1, int(round(t / dt)))

    def cloud(z_, first):
        for k, zk, _ in run_batch(s, z_, dt, steps, seed, range(first, first + paths)):
            pass
        return zk.T.copy()

    A, B = cloud(z, 0), cloud(z_other, paths)
    pooled = np.concatenate([A, B])
    active = [i for i in range(s.N) if np.ptp(pooled[:, i]) > 0]
    if not active:
        return OverlapReport(0.0, (0.0, 0.0), 0, paths, t)
    A, B, pooled = A[:, active], B[:, active], pooled[:, active]
    d = len(active)
    nb = bins or math.ceil(paths ** (1 / 3))
    nb = max(1, min(nb, int(max_cells ** (1 / d))))
    edges = [np.linspace(pooled[:, i].min(), pooled[:, i].max(), nb + 1) for i in range(d)]
    est, ha, hb = _tv(A, B, edges)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2**31,)))
    boot = [
        _tv(A[rng.integers(0, paths, paths)], B[rng.integers(0, paths, paths)], edges)[0]
        for _ in range(n_boot)
    ]
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return OverlapReport(est, (float(lo), float(hi)), nb, paths, t, histograms=(ha, hb), edges=edges)


def histogram_csv(path, samples: np.ndarray, names: Sequence[str], bins: int = 50) -> None:
    """Per-coordinate marginal histograms of ``samples`` (shape (count, N))."""
    samples = np.asarray(samples, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coordinate", "bin_lo", "bin_hi", "count"])
        for i, name in enumerate(names):
            counts, edges = np.histogram(samples[:, i], bins=bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])
