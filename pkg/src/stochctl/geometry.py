"""Vector fields, Lie brackets and the assumption checks.

A :class:`ModelSpec` describes the control system ``z' = f(z) + u(t)`` with
``u`` valued in a subspace ``E``; the checkers test divergence-freeness,
conservation of ``H`` and the bracket-generating condition for
``{(f, 1), e_1, ..., e_n}`` in the time-extended space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .expr import poly
from .expr.core import Var, walk
from .expr import (
    ZERO,
    CompiledExprs,
    Const,
    DomainError,
    Expr,
    ExpansionTooLarge,
    compile_exprs,
    differentiate,
    expand,
    is_zero,
    simplify,
    variables,
    wrap,
)

log = logging.getLogger(__name__)

CHECK_TOL = 1e-10
CHECK_POINTS = 100
CHECK_SEED = 0
DEFAULT_MAX_DEPTH = 6
DEFAULT_RANK_TOL = 1e-8
DEFAULT_RANK_POINTS = 10


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VectorField:
    """A vector field on R^dim given by one expression per component."""

    components: tuple[Expr, ...]
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(wrap(c) for c in self.components))
        if len(self.components) != self.dim:
            raise ModelError(f"{len(self.components)} components for dimension {self.dim}")
        for c in self.components:
            if any(i >= self.dim for i in c.variables()):
                raise ModelError(f"component {c} references a variable outside R^{self.dim}")

    @classmethod
    def of(cls, components: Sequence) -> "VectorField":
        comps = tuple(wrap(c) for c in components)
        return cls(comps, len(comps))

    @classmethod
    def constant(cls, vector: Sequence[float]) -> "VectorField":
        return cls.of([Const(float(v)) if float(v) != int(v) else Const(int(v)) for v in vector])

    def __eq__(self, other) -> bool:
        return isinstance(other, VectorField) and self.dim == other.dim and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __getitem__(self, i: int) -> Expr:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def simplified(self) -> "VectorField":
        return VectorField(tuple(simplify(c) for c in self.components), self.dim)

    def is_zero(self) -> bool:
        return all(is_zero(c) for c in self.components)

    @cached_property
    def poly(self) -> list | None:
        """Sparse polynomial components, or None if some component is not polynomial."""
        out = []
        for c in self.components:
            p = poly.to_poly(c)
            if p is None:
                return None
            out.append(p)
        return out

    @cached_property
    def compiled(self) -> CompiledExprs:
        return compile_exprs(self.components, self.dim)

    def __call__(self, z) -> np.ndarray:
        """Evaluate at ``z`` of shape (dim,) or (dim, batch)."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self.compiled.at(z)
        return self.compiled(z)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A control system ``z' = f(z) + u``, ``u`` valued in ``E``.

    ``E`` is given either as coordinate indices (the x-block; the remaining
    coordinates form the y-block) or as an orthonormal basis matrix with one
    column per basis vector. ``H`` may be ``None`` for systems without a
    conserved quantity.
    """

    name: str
    variables: tuple[str, ...]
    field: VectorField
    H: Expr | None
    control_indices: tuple[int, ...] | None = None
    control_basis: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.variables)
        object.__setattr__(self, "variables", tuple(self.variables))
        if self.field.dim != n:
            raise ModelError(f"field dimension {self.field.dim} != {n} variables")
        if len(set(self.variables)) != n:
            raise ModelError("duplicate variable names")
        if self.H is not None and any(i >= n for i in self.H.variables()):
            raise ModelError("H references an undeclared variable")
        if (self.control_indices is None) == (self.control_basis is None):
            raise ModelError("give exactly one of control_indices / control_basis")
        if self.control_indices is not None:
            idx = tuple(int(i) for i in self.control_indices)
            if len(set(idx)) != len(idx) or any(not 0 <= i < n for i in idx):
                raise ModelError(f"invalid control indices {idx}")
            object.__setattr__(self, "control_indices", idx)
        else:
            B = np.asarray(self.control_basis, dtype=float)
            if B.ndim != 2 or B.shape[0] != n or B.shape[1] < 1:
                raise ModelError(f"control basis must be {n} x n, got {B.shape}")
            if np.max(np.abs(B.T @ B - np.eye(B.shape[1]))) > 1e-12:
                raise ModelError("control basis columns are not orthonormal")
            B.setflags(write=False)
            object.__setattr__(self, "control_basis", B)

    @property
    def N(self) -> int:
        return len(self.variables)

    @property
    def n_controls(self) -> int:
        return len(self.control_indices) if self.control_indices is not None else self.control_basis.shape[1]

    @property
    def basis(self) -> np.ndarray:
        """Columns spanning E."""
        if self.control_basis is not None:
            return np.array(self.control_basis)
        B = np.zeros((self.N, len(self.control_indices)))
        for j, i in enumerate(self.control_indices):
            B[i, j] = 1.0
        return B

    @property
    def x_indices(self) -> tuple[int, ...]:
        if self.control_indices is None:
            raise ModelError(
                f"model {self.name!r} gives E as a basis matrix; change coordinates so that "
                "E is spanned by coordinate axes"
            )
        return self.control_indices

    @property
    def y_indices(self) -> tuple[int, ...]:
        x = set(self.x_indices)
        return tuple(i for i in range(self.N) if i not in x)

    def vars(self):
        return variables(self.variables)

    def with_control_basis(self, basis: np.ndarray) -> "ModelSpec":
        return ModelSpec(self.name, self.variables, self.field, self.H, None, np.asarray(basis, float), dict(self.flags))

    def with_H(self, H: Expr | None) -> "ModelSpec":
        return ModelSpec(self.name, self.variables, self.field, H, self.control_indices, self.control_basis, dict(self.flags))


# -- brackets ------------------------------------------------------------------


def lie_bracket(a: VectorField, b: VectorField) -> VectorField:
    """``[a, b]_i = sum_j a_j d_j b_i - b_j d_j a_i``, simplified.

    Polynomial fields take a sparse-polynomial path; there, float
    coefficients below ``1e-13`` times the largest input coefficient
    product are treated as rounding residue and dropped.
    """
    if a.dim != b.dim:
        raise ModelError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.poly is not None and b.poly is not None:
        return _poly_bracket(a, b)
    comps = []
    for i in range(a.dim):
        terms = []
        for j in range(a.dim):
            if not is_zero(a[j]) and j in b[i].variables():
                terms.append(a[j] * differentiate(b[i], j))
            if not is_zero(b[j]) and j in a[i].variables():
                terms.append(-(b[j] * differentiate(a[i], j)))
        comps.append(simplify(sum(terms, ZERO)) if terms else ZERO)
    return VectorField(tuple(comps), a.dim)


def _poly_bracket(a: VectorField, b: VectorField) -> VectorField:
    pa, pb = a.poly, b.poly
    scale = max((abs(float(c)) for p in pa for c in p.values()), default=0.0) * max(
        (abs(float(c)) for p in pb for c in p.values()), default=0.0
    )
    names = {}
    for c in a.components + b.components:
        for node in walk(c):
            if isinstance(node, Var):
                names.setdefault(node.index, node)
    va = [poly.variables_of(p) for p in pa]
    vb = [poly.variables_of(p) for p in pb]
    comps, polys = [], []
    for i in range(a.dim):
        out: dict = {}
        for j in vb[i]:
            if pa[j]:
                poly.mul_acc(out, pa[j], poly.diff(pb[i], j))
        for j in va[i]:
            if pb[j]:
                poly.mul_acc(out, pb[j], poly.diff(pa[i], j), -1)
        out = poly.prune(out, 1e-13, scale)
        polys.append(out)
        comps.append(poly.from_poly(out, names))
    v = VectorField(tuple(comps), a.dim)
    v.__dict__["poly"] = polys
    return v


def extend_field(f: VectorField) -> VectorField:
    """``(f(z), 1)`` on R^{N+1}; the time variable (index N) is never referenced."""
    return VectorField(tuple(f.components) + (Const(1),), f.dim + 1)


def extend_constant(vector: Sequence[float]) -> VectorField:
    return VectorField.constant(list(vector) + [0.0])


def divergence(f: VectorField) -> Expr:
    return simplify(sum((differentiate(f[i], i) for i in range(f.dim)), ZERO))


# -- checks --------------------------------------------------------------------


@dataclass
class CheckResult:
    """Outcome of a symbolic-then-numeric identity check."""

    name: str
    verdict: str  # "pass" | "fail" | "not-applicable"
    residual: Expr | None = None
    method: str = "symbolic"
    max_abs: float = 0.0
    points: int = 0
    tol: float = CHECK_TOL
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "residual": None if self.residual is None else _clip(str(self.residual)),
            "method": self.method,
            "max_abs": self.max_abs,
            "points": self.points,
            "tol": self.tol,
            "message": self.message,
        }


def _clip(text: str, limit: int = 2000) -> str:
    return text if len(text) <= limit else text[:limit] + f" ... ({len(text)} chars)"


def sample_points(n: int, count: int = CHECK_POINTS, seed: int = CHECK_SEED, scale: float = 1.0) -> np.ndarray:
    """The documented sample set: ``count`` standard-normal points (seeded), shape (n, count)."""
    return scale * np.random.default_rng(seed).standard_normal((n, count))


def _identity_check(name: str, residual: Expr, n: int, points=None, tol=CHECK_TOL) -> CheckResult:
    residual = simplify(residual)
    if is_zero(residual):
        return CheckResult(name, "pass", residual, "symbolic", 0.0, 0, tol)
    try:
        expanded = expand(residual, max_terms=50_000)
    except ExpansionTooLarge:
        expanded = residual
    if is_zero(expanded):
        return CheckResult(name, "pass", expanded, "symbolic-expanded", 0.0, 0, tol)
    pts = sample_points(n) if points is None else np.asarray(points, dtype=float)
    values = compile_exprs([residual], n)
    vals = []
    skipped = 0
    for k in range(pts.shape[1]):
        try:
            vals.append(abs(values.at(pts[:, k])[0]))
        except DomainError:
            skipped += 1
    if not vals:
        return CheckResult(name, "fail", residual, "numeric", float("nan"), 0, tol, "no admissible sample point")
    worst = float(max(vals))
    verdict = "pass" if worst <= tol else "fail"
    msg = f"{skipped} sample points outside the domain skipped" if skipped else ""
    return CheckResult(name, verdict, residual, "numeric", worst, len(vals), tol, msg)


def check_divergence_free(f: VectorField, points=None, tol: float = CHECK_TOL) -> CheckResult:
    """Symbolic divergence; numeric fallback at the documented sample set."""
    return _identity_check("divergence-free", divergence(f), f.dim, points, tol)


def check_conserved(m: ModelSpec, points=None, tol: float = CHECK_TOL) -> CheckResult:
    """Checks ``<grad H, f> = 0``."""
    if m.H is None:
        return CheckResult("conserved-quantity", "not-applicable", method="none",
                           message=f"model {m.name!r} declares no conserved quantity H")
    terms = [differentiate(m.H, i) * m.field[i] for i in range(m.N) if i in m.H.variables()]
    return _identity_check("conserved-quantity", sum(terms, ZERO), m.N, points, tol)


# -- Hormander rank ------------------------------------------------------------


@dataclass
class RankReport:
    point: tuple[float, ...]
    depth: int
    fields: list[tuple[str, VectorField]]
    rank: int
    singular_values: list[float]
    verdict: str  # "spans" | "deficient" | "inconclusive-at-depth"
    near_threshold: bool = False
    closed: bool = False
    rank_tol: float = DEFAULT_RANK_TOL

    @property
    def dim(self) -> int:
        return len(self.point)

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "depth": self.depth,
            "rank": self.rank,
            "dimension": self.dim,
            "verdict": self.verdict,
            "singular_values": self.singular_values,
            "near_threshold": self.near_threshold,
            "closed": self.closed,
            "rank_tol": self.rank_tol,
            "fields": [{"word": w, "components": [str(c) for c in v]} for w, v in self.fields],
        }


class LieClosure:
    """Breadth-first bracket closure of ``{(f,1), e_1, ..., e_n}``.

    Level 1 holds the generators. Level ``d`` holds the brackets ``[F, G]``
    of level ``d-1`` fields ``F`` with generators ``G`` (``strategy=
    "generators"``) or with every field found so far (``"all_pairs"``).
    Fields that are constant-coefficient combinations of earlier ones are
    dropped (tested on random probe points); when a level adds nothing the
    algebra is closed.
    """

    def __init__(self, m: ModelSpec, strategy: str = "generators", probes: int = 8, seed: int = 12345):
        if strategy not in ("generators", "all_pairs"):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.model = m
        self.strategy = strategy
        self.dim = m.N + 1
        ft = extend_field(m.field)
        gens = [("f", ft)]
        B = m.basis
        for j in range(B.shape[1]):
            gens.append((f"e{j + 1}", extend_constant(B[:, j])))
        self.generators = gens
        self._probe_pts = np.random.default_rng(seed).standard_normal((self.dim, probes))
        self._probe_rows: list[np.ndarray] = []
        self.levels: list[list[tuple[str, VectorField]]] = []
        self.closed = False
        first = []
        for w, v in gens:
            if self._accept(v):
                first.append((w, v))
        self.levels.append(first)

    def _probe(self, v: VectorField) -> np.ndarray | None:
        try:
            return v.compiled(self._probe_pts).ravel()
        except DomainError:
            return None

    def _accept(self, v: VectorField) -> bool:
        if v.is_zero():
            return False
        row = self._probe(v)
        if row is None or not np.all(np.isfinite(row)):
            return True
        if self._probe_rows:
            A = np.vstack(self._probe_rows + [row])
            s = np.linalg.svd(A, compute_uv=False)
            if s[-1] <= 1e-9 * s[0]:
                return False
        self._probe_rows.append(row)
        return True

    @property
    def fields(self) -> list[tuple[str, VectorField]]:
        return [f for level in self.levels for f in level]

    def grow(self) -> bool:
        """Add one level; returns False once the algebra is closed."""
        if self.closed:
            return False
        partners = self.generators if self.strategy == "generators" else self.fields
        new = []
        for w, F in self.levels[-1]:
            for wg, G in partners:
                if F is G:
                    continue
                B = lie_bracket(F, G)
                if self._accept(B):
                    new.append((f"[{w},{wg}]", B))
        if not new:
            self.closed = True
            return False
        self.levels.append(new)
        log.debug("closure level %d: %d new fields", len(self.levels), len(new))
        return True

    def ensure_depth(self, depth: int) -> None:
        while len(self.levels) < depth and self.grow():
            pass


def _rank(vectors: np.ndarray, rank_tol: float) -> tuple[int, np.ndarray, bool]:
    if vectors.size == 0:
        return 0, np.zeros(0), False
    s = np.linalg.svd(vectors, compute_uv=False)
    if s[0] == 0:
        return 0, s, False
    thresh = rank_tol * s[0]
    rank = int(np.sum(s > thresh))
    near = bool(np.any((s > thresh * 1e-2) & (s < thresh * 1e2)))
    return rank, s, near


def hormander_rank(
    m: ModelSpec,
    point: Sequence[float],
    time: float = 0.0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    rank_tol: float = DEFAULT_RANK_TOL,
    *,
    strategy: str = "generators",
    closure: LieClosure | None = None,
) -> RankReport:
    """Numerical rank of the generated Lie algebra at ``(point, time)``."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    closure = closure or LieClosure(m, strategy)
    zt = np.append(np.asarray(point, dtype=float), float(time))
    if zt.shape != (m.N + 1,):
        raise ModelError(f"point must have {m.N} coordinates")
    depth = 1
    while True:
        closure.ensure_depth(depth)
        used = [f for level in closure.levels[:depth] for f in level]
        M = np.array([v.compiled.at(zt) for _, v in used]) if used else np.zeros((0, m.N + 1))
        rank, s, near = _rank(M, rank_tol)
        saturated = closure.closed and depth >= len(closure.levels)
        if rank == m.N + 1 or depth >= max_depth or saturated:
            break
        depth += 1
    if rank == m.N + 1:
        verdict = "spans"
    elif saturated:
        verdict = "deficient"
    else:
        verdict = "inconclusive-at-depth"
    return RankReport(tuple(zt), depth, used, rank, [float(x) for x in s], verdict, near, saturated, rank_tol)


def hormander_scan(
    m: ModelSpec,
    points: Sequence[Sequence[float]] | None = None,
    n_random: int = DEFAULT_RANK_POINTS,
    seed: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    rank_tol: float = DEFAULT_RANK_TOL,
    strategy: str = "generators",
) -> list[RankReport]:
    """Rank checks at the given points plus ``n_random`` seeded normal points."""
    pts = [np.asarray(p, dtype=float) for p in (points or [])]
    if n_random:
        pts += list(np.random.default_rng(seed).standard_normal((n_random, m.N)))
    closure = LieClosure(m, strategy)
    return [hormander_rank(m, p, 0.0, max_depth, rank_tol, closure=closure) for p in pts]


# -- level sets ----------------------------------------------------------------


@dataclass
class LevelSetReport:
    """HEURISTIC evidence for compact sublevel sets; never gates anything."""

    radii: list[float]
    min_values: list[float]
    increasing: bool
    unbounded: bool
    directions: int
    heuristic: bool = True

    @property
    def verdict(self) -> str:
        return "HEURISTIC: pass" if self.increasing and self.unbounded else "HEURISTIC: fail"

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "min_values": self.min_values,
            "increasing": self.increasing,
            "unbounded": self.unbounded,
            "directions": self.directions,
            "verdict": self.verdict,
            "heuristic": True,
        }


def check_level_set_growth(
    H: Expr,
    radii: Sequence[float] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
    directions: int = 64,
    nvars: int | None = None,
    seed: int = 0,
) -> LevelSetReport:
    """Minimum of ``H`` over random unit rays at each radius.

    ``increasing`` requires strictly increasing minima; ``unbounded`` further
    requires the last increment to be at least 1% of the mean increment.
    """
    radii = [float(r) for r in radii]
    if directions < 1 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase and directions must be >= 1")
    n = nvars if nvars is not None else (max(H.variables()) + 1 if H.variables() else 1)
    u = np.random.default_rng(seed).standard_normal((n, directions))
    u /= np.linalg.norm(u, axis=0)
    if n == 1 and directions >= 2:
        u[0, :2] = (1.0, -1.0)
    fn = compile_exprs([H], n)
    mins = [float(np.min(fn(r * u)[0])) for r in radii]
    diffs = np.diff(mins)
    increasing = bool(np.all(diffs > 0)) if len(diffs) else False
    unbounded = increasing and bool(diffs[-1] >= 0.01 * np.mean(diffs))
    return LevelSetReport(radii, mins, increasing, unbounded, directions)


# -- deterministic flow ----------------------------------------------------------


def rk4(
    fun: Callable[[np.ndarray], np.ndarray],
    z0: Sequence[float],
    dt: float,
    steps: int,
    record_every: int = 1,
    blowup: float = 1e12,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta; returns recorded states (rows)."""
    z = np.asarray(z0, dtype=float).copy()
    out = [z.copy()]
    for k in range(steps):
        k1 = fun(z)
        k2 = fun(z + 0.5 * dt * k1)
        k3 = fun(z + 0.5 * dt * k2)
        k4 = fun(z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > blowup:
            raise FloatingPointError(f"ODE solution blew up at t = {(k + 1) * dt:g}")
        if (k + 1) % record_every == 0:
            out.append(z.copy())
    return np.array(out)


def flow(m: ModelSpec, z0: Sequence[float], dt: float, steps: int, record_every: int = 1) -> np.ndarray:
    """Uncontrolled flow of ``z' = f(z)`` with RK4."""
    return rk4(m.field, z0, dt, steps, record_every)
