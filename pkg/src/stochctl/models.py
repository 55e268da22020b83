"""Builders for the example systems, plus the JSON model-file format.

Each builder returns a :class:`~stochctl.geometry.ModelSpec`. Model files
use the schema tag ``stochctl.model/1``::

    {"schema": "stochctl.model/1", "name": ..., "variables": [...],
     "field": ["expr", ...], "H": "expr" | null,
     "control": {"indices": [...]} | {"basis": [[...], ...]},
     "flags": {...}}
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .auxsde import SdeSystem
from .expr import (
    ZERO,
    Const,
    Expr,
    compile_exprs,
    differentiate,
    gsat,
    bump,
    parse_expr,
    polynomial_from_monomials,
    simplify,
    sqrt,
    variables,
)
from .geometry import ModelError, ModelSpec, VectorField

MODEL_SCHEMA = "stochctl.model/1"


# -- small examples --------------------------------------------------------------


def build_harmonic_pair() -> ModelSpec:
    """Two uncoupled unit oscillators, controlled through ``p1`` only."""
    names = ("q1", "q2", "p1", "p2")
    q1, q2, p1, p2 = variables(names)
    f = VectorField.of([p1, p2, -q1, -q2])
    H = simplify((p1**2 + p2**2) / 2 + (q1**2 + q2**2) / 2)
    return ModelSpec("harmonic-pair", names, f, H, control_indices=(2,))


def build_trap() -> ModelSpec:
    """``x' = u - x``, ``y' = g(y + g(x)) - y phi(y)``.

    ``g`` is the saturation ``x / sqrt(1 + x^2)`` and ``phi`` the smooth bump
    vanishing on ``|y| <= 2`` and equal to one on ``|y| >= 3``. The band
    ``1 < |y| < 2`` cannot be crossed towards the origin, so the system is
    not controllable although the bracket condition holds.
    """
    names = ("x", "y")
    x, y = variables(names)
    f = VectorField.of([-x, gsat(y + gsat(x)) - y * bump(y)])
    return ModelSpec("trap", names, f, None, control_indices=(0,), flags={"no_conserved_quantity": True, "trap": True})


def trap_bracket_expected() -> VectorField:
    """Closed form of ``[d_x, f]`` for :func:`build_trap`."""
    x, y = variables(("x", "y"))
    a = y + gsat(x)
    dg = lambda e: (1 + e**2) ** Fraction(-3, 2)
    return VectorField.of([Const(-1), simplify(dg(a) * dg(x))])


@dataclass
class TrapCertificate:
    """Grid evidence that ``y' > 0`` on ``1 < y < 2`` and ``y' < 0`` on ``-2 < y < -1``."""

    min_upper: float
    max_lower: float
    grid: dict

    @property
    def holds(self) -> bool:
        return self.min_upper > 0 and self.max_lower < 0

    def to_dict(self) -> dict:
        return {"holds": self.holds, "min_ydot_upper_band": self.min_upper, "max_ydot_lower_band": self.max_lower, "grid": self.grid}

    def describe(self) -> str:
        return (
            f"trap certificate {'holds' if self.holds else 'FAILS'}: "
            f"min y' = {self.min_upper:.6g} on y in [1.01, 1.99], "
            f"max y' = {self.max_lower:.6g} on y in [-1.99, -1.01] (x in [-10, 10])"
        )


def trap_certificate(m: ModelSpec | None = None, x_step: float = 0.01, y_step: float = 0.01) -> TrapCertificate:
    m = m or build_trap()
    xs = np.linspace(-10.0, 10.0, int(round(20.0 / x_step)) + 1)
    ny = int(round(0.98 / y_step)) + 1
    up = np.linspace(1.01, 1.99, ny)
    X, Y = np.meshgrid(xs, up, indexing="ij")
    fy = compile_exprs([m.field[1]], 2)
    upper = fy(np.stack([X.ravel(), Y.ravel()]))[0]
    lower = fy(np.stack([X.ravel(), -Y.ravel()]))[0]
    grid = {"x": [-10.0, 10.0, x_step], "y_upper": [1.01, 1.99, y_step], "y_lower": [-1.99, -1.01, y_step]}
    return TrapCertificate(float(upper.min()), float(lower.max()), grid)


def build_slow() -> ModelSpec:
    """``x' = -d_y H + u``, ``y' = d_x H`` with ``H = sqrt(1 + x^2 + y^2)``.

    ``|d_x H| <= 1`` caps the speed of ``y``, so reaching a far target takes
    at least the distance in ``y``.
    """
    names = ("x", "y")
    x, y = variables(names)
    H = sqrt(1 + x**2 + y**2)
    f = VectorField.of([simplify(-differentiate(H, 1)), simplify(differentiate(H, 0))])
    return ModelSpec("slow", names, f, simplify(H), control_indices=(0,))


def build_gaussian_1d() -> ModelSpec:
    """``x' = u`` with ``H = x^2 / 2``; the tempered density is standard normal."""
    (x,) = variables(("x",))
    return ModelSpec("gaussian-1d", ("x",), VectorField.of([ZERO]), simplify(x**2 / 2), control_indices=(0,))


# -- Galerkin-truncated Euler -------------------------------------------------------


def _perp_basis(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of k-perp from the two axes least aligned with ``k``."""
    order = sorted(range(3), key=lambda i: (abs(k[i]), i))[:2]
    kh = k / np.linalg.norm(k)
    out = []
    for i in order:
        v = np.zeros(3)
        v[i] = 1.0
        v -= (v @ kh) * kh
        for w in out:
            v -= (v @ w) * w
        out.append(v / np.linalg.norm(v))
    return out[0], out[1]


def _name(k) -> str:
    return "_".join(f"m{-c}" if c < 0 else str(c) for c in k)


@dataclass(frozen=True, eq=False)
class EulerTruncationSpec:
    """Retained modes ``0 < max|k_i| <= nstar`` and their real coordinates.

    One representative per ``+-k`` pair (first nonzero component positive),
    ordered by ``(|k|^2, k)``. Representative ``r`` owns coordinates
    ``4r .. 4r+3`` = ``(a1, b1, a2, b2)`` with
    ``u_k = (a1 + i b1) e1 + (a2 + i b2) e2`` and ``u_{-k} = conj(u_k)``.
    """

    nstar: int

    def __post_init__(self):
        if int(self.nstar) < 1:
            raise ModelError("nstar must be at least 1 (nstar = 0 leaves no modes)")

    @cached_property
    def representatives(self) -> list[tuple[int, int, int]]:
        n = self.nstar
        reps = []
        for k in itertools.product(range(-n, n + 1), repeat=3):
            nz = [c for c in k if c != 0]
            if nz and nz[0] > 0:
                reps.append(k)
        return sorted(reps, key=lambda k: (sum(c * c for c in k), k))

    @cached_property
    def bases(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [_perp_basis(np.array(k, dtype=float)) for k in self.representatives]

    @property
    def N(self) -> int:
        return 4 * len(self.representatives)

    @cached_property
    def index(self) -> dict[tuple[int, int, int], tuple[int, int]]:
        """Retained k (both signs) -> (representative index, sign)."""
        out = {}
        for r, k in enumerate(self.representatives):
            out[k] = (r, 1)
            out[tuple(-c for c in k)] = (r, -1)
        return out

    @cached_property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(f"u{_name(k)}_{s}" for k in self.representatives for s in ("a1", "b1", "a2", "b2"))

    def mode_matrix(self, k) -> np.ndarray:
        """Complex 3 x N matrix ``M`` with ``u_k = M z``."""
        r, sign = self.index[tuple(k)]
        e1, e2 = self.bases[r]
        M = np.zeros((3, self.N), dtype=complex)
        M[:, 4 * r] = e1
        M[:, 4 * r + 1] = 1j * sign * e1
        M[:, 4 * r + 2] = e2
        M[:, 4 * r + 3] = 1j * sign * e2
        return M

    def modes(self, z) -> dict[tuple[int, int, int], np.ndarray]:
        z = np.asarray(z, dtype=float)
        return {k: self.mode_matrix(k) @ z for k in self.index}

    def coordinates(self, modes: dict) -> np.ndarray:
        z = np.zeros(self.N)
        for r, k in enumerate(self.representatives):
            e1, e2 = self.bases[r]
            u = np.asarray(modes[k])
            c1, c2 = e1 @ u, e2 @ u
            z[4 * r : 4 * r + 4] = [c1.real, c1.imag, c2.real, c2.imag]
        return z

    def low_mode_indices(self, modes: Sequence[tuple[int, int, int]] | None = None) -> tuple[int, ...]:
        """Coordinates of the given representatives (default: ``|k| = 1``)."""
        if modes is None:
            modes = [k for k in self.representatives if sum(c * c for c in k) == 1]
        out = []
        for k in modes:
            r, _ = self.index[tuple(k)]
            out.extend(range(4 * r, 4 * r + 4))
        return tuple(sorted(set(out)))


def euler_rhs_complex(spec: EulerTruncationSpec, modes: dict) -> dict:
    """Direct evaluation of the truncated convolution for every retained ``k``.

    ``du_k/dt = -i sum_{h + l = k} (k . u_h) (u_l - (k . u_l / |k|^2) k)``
    over retained ``h`` and ``l``.
    """
    out = {}
    keys = list(spec.index)
    for k in keys:
        kv = np.array(k, dtype=float)
        acc = np.zeros(3, dtype=complex)
        for h in keys:
            l = tuple(a - b for a, b in zip(k, h))
            if l not in spec.index:
                continue
            ul = modes[l]
            acc += (kv @ modes[h]) * (ul - (kv @ ul) / (kv @ kv) * kv)
        out[k] = -1j * acc
    return out


def euler_quadratic_forms(spec: EulerTruncationSpec, drop: float = 1e-13) -> np.ndarray:
    """Symmetric matrices ``S_i`` with ``z_i' = z^T S_i z`` (shape (N, N, N))."""
    N = spec.N
    S = np.zeros((N, N, N))
    mats = {k: spec.mode_matrix(k) for k in spec.index}
    for r, k in enumerate(spec.representatives):
        kv = np.array(k, dtype=float)
        Q = [np.zeros((N, N), dtype=complex) for _ in range(2)]
        for h in spec.index:
            l = tuple(a - b for a, b in zip(k, h))
            if l not in spec.index:
                continue
            a = kv @ mats[h]
            for j, e in enumerate(spec.bases[r]):
                # e is orthogonal to k, so the projection drops out
                Q[j] += np.outer(a, e @ mats[l])
        for j in range(2):
            Qj = -1j * Q[j]
            for part, row in ((Qj.real, 4 * r + 2 * j), (Qj.imag, 4 * r + 2 * j + 1)):
                S[row] = (part + part.T) / 2
    S[np.abs(S) < drop] = 0.0
    return S


def build_euler_galerkin(nstar: int = 1, control_modes: Sequence[tuple[int, int, int]] | None = None) -> ModelSpec:
    """Real-coordinate Galerkin truncation of the 3D Euler equations on the torus.

    ``H = sum over all retained k of |u_k|^2``; ``E`` defaults to the
    coordinates of the modes with ``|k| = 1``.
    """
    spec = EulerTruncationSpec(int(nstar))
    names = spec.variable_names
    vs = variables(names)
    S = euler_quadratic_forms(spec)
    comps = []
    for i in range(spec.N):
        Si = S[i]
        terms = []
        for p, q in zip(*np.nonzero(np.triu(Si))):
            c = Si[p, q] if p == q else 2 * Si[p, q]
            terms.append((float(c), {int(p): 2} if p == q else {int(p): 1, int(q): 1}))
        comps.append(polynomial_from_monomials(terms, vs))
    H = polynomial_from_monomials([(2, {i: 2}) for i in range(spec.N)], vs)
    idx = spec.low_mode_indices(control_modes)
    flags = {"euler_nstar": spec.nstar}
    return ModelSpec(f"euler-n{spec.nstar}", names, VectorField.of(comps), H, control_indices=idx, flags=flags)


# -- oscillator chain with heat baths -----------------------------------------------


@dataclass
class ChainSpec:
    """Oscillator chain coupled to ``M`` heat baths through ``r_i F_i(p, q)``.

    ``H_S`` and ``F`` are strings over ``q1..qN, p1..pN`` (or expressions in
    those variables, indexed ``q`` first then ``p``).
    """

    n_osc: int = 1
    n_baths: int = 2
    H_S: str | Expr = "(p1^2 + q1^2)/2"
    F: Sequence[str | Expr] = ("q1", "q1")
    gamma: Sequence[float] = (1.0, 1.0)
    lam: Sequence[float] = (1.0, 1.0)
    T: Sequence[float] = (1.0, 1.0)
    lambda_scaled_noise: bool = False

    def __post_init__(self):
        M = self.n_baths
        if self.n_osc < 1 or M < 1:
            raise ModelError("need at least one oscillator and one bath")
        for label, seq in (("F", self.F), ("gamma", self.gamma), ("lam", self.lam), ("T", self.T)):
            if len(seq) != M:
                raise ModelError(f"{label} needs {M} entries")
        if any(not g > 0 for g in self.gamma):
            raise ModelError("gamma_i must be positive")
        if any(not t > 0 for t in self.T):
            raise ModelError("T_i must be positive")
        if any(l == 0 for l in self.lam):
            raise ModelError("lambda_i must be nonzero")

    @property
    def names(self) -> tuple[str, ...]:
        n = self.n_osc
        return tuple([f"q{j+1}" for j in range(n)] + [f"p{j+1}" for j in range(n)] + [f"r{i+1}" for i in range(self.n_baths)])

    def _expr(self, e) -> Expr:
        if isinstance(e, Expr):
            return e
        e = parse_expr(e, self.names)
        if any(i >= 2 * self.n_osc for i in e.variables()):
            raise ModelError("H_S and F_i may depend on (q, p) only")
        return e

    def to_dict(self) -> dict:
        return {
            "n_osc": self.n_osc, "n_baths": self.n_baths, "H_S": str(self.H_S),
            "F": [str(f) for f in self.F], "gamma": list(self.gamma), "lam": list(self.lam),
            "T": list(self.T), "lambda_scaled_noise": self.lambda_scaled_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainSpec":
        return cls(
            int(d.get("n_osc", 1)), int(d.get("n_baths", 2)), d.get("H_S", "(p1^2 + q1^2)/2"),
            tuple(d.get("F", ("q1", "q1"))), tuple(map(float, d.get("gamma", (1.0, 1.0)))),
            tuple(map(float, d.get("lam", (1.0, 1.0)))), tuple(map(float, d.get("T", (1.0, 1.0)))),
            bool(d.get("lambda_scaled_noise", False)),
        )


def build_chain(spec: ChainSpec | None = None) -> tuple[ModelSpec, SdeSystem]:
    """Control form ``r_i' = u_i`` with its conserved ``H``, and the bath SDE.

    The bath SDE has r-drift ``-gamma_i r_i + gamma_i lam_i^2 F_i`` and noise
    ``-sqrt(2 gamma_i T_i) dw_i`` (times ``|lam_i|`` when
    ``lambda_scaled_noise`` is set, which makes ``exp(-H/T)`` invariant for
    every ``lam``; the unscaled form needs ``lam_i^2 = 1``).
    """
    spec = spec or ChainSpec()
    n, M = spec.n_osc, spec.n_baths
    names = spec.names
    vs = variables(names)
    q, p, r = vs[:n], vs[n : 2 * n], vs[2 * n :]
    HS = spec._expr(spec.H_S)
    F = [spec._expr(f) for f in spec.F]
    H = simplify(HS + sum((r[i] ** 2 / (2 * spec.lam[i] ** 2) - r[i] * F[i] for i in range(M)), ZERO))
    ham = []
    for j in range(n):
        ham.append(simplify(differentiate(H, p[j].index)))
    for j in range(n):
        ham.append(simplify(-differentiate(H, q[j].index)))
    field_ = VectorField.of(ham + [ZERO] * M)
    m = ModelSpec("chain", names, field_, H, control_indices=tuple(range(2 * n, 2 * n + M)), flags={"chain": spec.to_dict()})
    drift = list(ham)
    amps = []
    for i in range(M):
        g, lam, T = spec.gamma[i], spec.lam[i], spec.T[i]
        drift.append(simplify(-g * r[i] + g * lam**2 * F[i]))
        scale = abs(lam) if spec.lambda_scaled_noise else 1.0
        amps.append(Const(-math.sqrt(2 * g * T) * scale))
    sde = SdeSystem(m, None, tuple(drift), m.control_indices, tuple(amps), H, None, "chain", {"T": list(spec.T)})
    return m, sde


# -- registry and model files ---------------------------------------------------


BUILDERS = {
    "harmonic-pair": build_harmonic_pair,
    "trap": build_trap,
    "slow": build_slow,
    "gaussian-1d": build_gaussian_1d,
    "euler": build_euler_galerkin,
    "chain": lambda spec=None: build_chain(spec)[0],
}


def model_to_dict(m: ModelSpec) -> dict:
    d = {
        "schema": MODEL_SCHEMA,
        "name": m.name,
        "variables": list(m.variables),
        "field": [str(c) for c in m.field],
        "H": None if m.H is None else str(m.H),
    }
    if m.control_indices is not None:
        d["control"] = {"indices": list(m.control_indices)}
    else:
        d["control"] = {"basis": m.control_basis.tolist()}
    d["flags"] = dict(m.flags)
    return d


def model_from_dict(d: dict) -> ModelSpec:
    if d.get("schema") != MODEL_SCHEMA:
        raise ModelError(f"unsupported model schema {d.get('schema')!r}")
    names = tuple(d["variables"])
    comps = [parse_expr(s, names) for s in d["field"]]
    H = None if d.get("H") is None else parse_expr(d["H"], names)
    ctrl = d.get("control", {})
    idx = ctrl.get("indices")
    basis = ctrl.get("basis")
    return ModelSpec(
        d.get("name", "model"), names, VectorField.of(comps), H,
        None if idx is None else tuple(idx),
        None if basis is None else np.asarray(basis, dtype=float),
        dict(d.get("flags", {})),
    )


def save_model(m: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=2) + "\n")


def load_model(path) -> ModelSpec:
    return model_from_dict(json.loads(Path(path).read_text()))


def chain_sde_for(m: ModelSpec) -> SdeSystem | None:
    """Rebuild the bath SDE of a chain model from its flags, if present."""
    spec = m.flags.get("chain")
    if spec is None:
        return None
    return build_chain(ChainSpec.from_dict(spec))[1]
