"""Command-line driver.

Subcommands: ``model``, ``check``, ``simulate``, ``stationarity``, ``steer``.
Every subcommand writes a JSON report (schema ``stochctl.report/1``) that
echoes its parameters. Exit codes: 0 pass, 1 check failed, 2 usage or input
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .auxsde import GFamily, NoiseRecord, NumericalBlowup, build_sde, integrate
from .control import steer
from .expr import DomainError, ParseError
from .geometry import (
    DEFAULT_RANK_POINTS,
    ModelError,
    ModelSpec,
    check_conserved,
    check_divergence_free,
    check_level_set_growth,
    hormander_scan,
)
from .measure import InvariantDensity, stationarity_test
from .models import (
    BUILDERS,
    ChainSpec,
    build_chain,
    build_euler_galerkin,
    chain_sde_for,
    load_model,
    save_model,
)

REPORT_SCHEMA = "stochctl.report/1"
MANIFEST_SCHEMA = "stochctl.manifest/1"

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stochctl")


class UsageError(Exception):
    pass


# -- manifests and reports ---------------------------------------------------------


@dataclass
class ExperimentManifest:
    """Everything needed to reproduce a run.

    ``model`` is a model-file path (relative to the manifest) or a builtin
    name; all randomness derives from ``seed`` via the per-path stream rule.
    """

    model: str
    model_options: dict = field(default_factory=dict)
    g: dict = field(default_factory=lambda: {"family": "linear", "alpha": 1.0})
    seed: int = 0
    dt: float = 1e-3
    steps: int = 1000
    paths: int = 1
    z0: list | None = None
    z1: list | None = None
    eps: float | None = None
    budget: int = 3
    max_time: float = 100.0
    attempts: int = 256
    test_functions: list = field(default_factory=list)
    burn_in: int | None = None
    output_dir: str = "."
    version: str = __version__
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        schema = d.pop("schema", MANIFEST_SCHEMA)
        if schema != MANIFEST_SCHEMA:
            raise UsageError(f"unsupported manifest schema {schema!r}")
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown manifest fields: {sorted(unknown)}")
        if "model" not in d:
            raise UsageError("manifest needs a 'model' entry")
        return cls(**d, base_dir=str(path.parent))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return {"schema": MANIFEST_SCHEMA, **d}

    def out_path(self, name: str) -> Path:
        out = Path(self.output_dir)
        if not out.is_absolute():
            out = Path(self.base_dir) / out
        out.mkdir(parents=True, exist_ok=True)
        return out / name

    def gfamily(self) -> GFamily:
        return GFamily.from_dict(self.g)


def resolve_model(ref: str, options: dict | None = None, base_dir: str = ".") -> ModelSpec:
    options = options or {}
    p = Path(ref)
    if not p.is_absolute():
        p = Path(base_dir) / p
    if p.is_file():
        return load_model(p)
    if ref == "euler":
        return build_euler_galerkin(int(options.get("nstar", 1)), options.get("control_modes"))
    if ref == "chain":
        return build_chain(ChainSpec.from_dict(options))[0]
    if ref in BUILDERS:
        return BUILDERS[ref]()
    raise UsageError(f"{ref!r} is neither a model file nor a builtin model ({', '.join(BUILDERS)})")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_report(path, command: str, parameters: dict, result: dict, status: str) -> dict:
    report = {
        "schema": REPORT_SCHEMA,
        "command": command,
        "tool_version": __version__,
        "status": status,
        "parameters": _jsonable(parameters),
        "result": _jsonable(result),
    }
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return report


# -- subcommands -----------------------------------------------------------------------


def cmd_model(args) -> int:
    opts = {}
    if args.name == "euler":
        opts["nstar"] = args.nstar
    if args.name == "chain" and args.config:
        opts = json.loads(Path(args.config).read_text())
    m = resolve_model(args.name, opts)
    out = args.output or f"{args.name}.json"
    save_model(m, out)
    print(f"wrote {out} ({m.name}, N={m.N}, dim E={m.n_controls})")
    return EXIT_OK


def run_checks(m: ModelSpec, points: int = DEFAULT_RANK_POINTS, max_depth: int = 4, seed: int = 0) -> tuple[dict, bool]:
    div = check_divergence_free(m.field)
    cons = check_conserved(m)
    scan = hormander_scan(m, [], n_random=points, seed=seed, max_depth=max_depth)
    rank_ok = all(r.verdict == "spans" for r in scan)
    result = {
        "divergence_free": div.to_dict(),
        "conserved_quantity": cons.to_dict(),
        "rank": {
            "verdict": "pass" if rank_ok else "fail",
            "points": [r.to_dict() for r in scan],
            "ranks": [r.rank for r in scan],
            "dimension": m.N + 1,
            "max_depth": max_depth,
            "note": "sampled points only; the bracket condition is not proven elsewhere",
        },
    }
    if m.H is not None:
        ls = check_level_set_growth(m.H, nvars=m.N, seed=seed)
        result["level_sets"] = ls.to_dict()
    else:
        result["level_sets"] = {"verdict": "not-applicable", "message": "no conserved quantity"}
    ok = div.verdict != "fail" and cons.verdict != "fail" and rank_ok
    return result, ok


def cmd_check(args) -> int:
    m = resolve_model(args.model)
    result, ok = run_checks(m, args.points, args.max_depth, args.seed)
    params = {"model": args.model, "points": args.points, "max_depth": args.max_depth, "seed": args.seed}
    write_report(args.report, "check", params, result, "pass" if ok else "fail")
    print(f"model {m.name}: N={m.N}, dim E={m.n_controls}")
    print(f"  divergence-free:    {result['divergence_free']['verdict']} ({result['divergence_free']['method']})")
    cons = result["conserved_quantity"]
    extra = f": {cons['message']}" if cons["verdict"] == "not-applicable" else f" ({cons['method']})"
    print(f"  conserved quantity: {cons['verdict']}{extra}")
    ranks = result["rank"]["ranks"]
    verdicts = sorted({p["verdict"] for p in result["rank"]["points"]})
    print(f"  Lie-algebra rank:   {min(ranks)}..{max(ranks)} of {m.N + 1} at {len(ranks)} points "
          f"(depth <= {args.max_depth}; {', '.join(verdicts)})")
    print(f"  level sets:         {result['level_sets']['verdict']}")
    print("all checks pass" if ok else "some checks FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def _manifest(args) -> ExperimentManifest:
    if args.manifest is not None:
        man = ExperimentManifest.load(args.manifest)
    elif args.model is not None:
        man = ExperimentManifest(args.model)
    else:
        raise UsageError("give a manifest file or --model")
    for name in ("seed", "dt", "steps", "paths", "eps", "budget", "max_time", "attempts", "burn_in"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(man, name, v)
    if getattr(args, "alpha", None) is not None:
        man.g = {**man.g, "alpha": args.alpha}
    if getattr(args, "family", None) is not None:
        man.g = {**man.g, "family": args.family}
    for name in ("z0", "z1"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(man, name, v)
    if getattr(args, "out", None) is not None:
        man.output_dir = args.out
        man.base_dir = "."
    return man


def cmd_simulate(args) -> int:
    man = _manifest(args)
    m = resolve_model(man.model, man.model_options, man.base_dir)
    s = chain_sde_for(m) if m.flags.get("chain") and man.g.get("family") == "chain" else build_sde(m, man.gfamily())
    z0 = np.zeros(m.N) if man.z0 is None else np.asarray(man.z0, dtype=float)
    files = []
    finals = []
    for p in range(man.paths):
        tr = integrate(s, z0, man.dt, man.steps, man.seed, path=p)
        csv_path = man.out_path(f"traj_p{p}.csv")
        noise_path = man.out_path(f"noise_p{p}.scnr")
        tr.to_csv(csv_path, m.variables)
        tr.noise.save(noise_path)
        files += [str(csv_path), str(noise_path)]
        finals.append(tr.states[-1].tolist())
    result = {"files": files, "final_states": finals, "sde": s.to_dict()}
    write_report(man.out_path("simulate_report.json"), "simulate", man.to_dict(), result, "pass")
    print(f"simulated {man.paths} path(s) x {man.steps} steps of {m.name}; wrote {len(files)} files")
    return EXIT_OK


def cmd_stationarity(args) -> int:
    man = _manifest(args)
    m = resolve_model(man.model, man.model_options, man.base_dir)
    s = build_sde(m, man.gfamily())
    fns = man.test_functions or ["1"] + [f"{v}^2" for v in m.variables]
    z0 = None if man.z0 is None else np.asarray(man.z0, dtype=float)
    rep = stationarity_test(s, fns, man.burn_in, man.steps, man.dt, man.seed, z0=z0)
    write_report(man.out_path("stationarity_report.json"), "stationarity", man.to_dict(), rep.to_dict(),
                 "pass" if rep.passed else "fail")
    for f, a, se, r, v in zip(rep.test_functions, rep.averages, rep.std_errors, rep.references, rep.verdicts):
        print(f"  {f}: average {a:.6g} +- {se:.2g} (reference {r:.6g}) {v}")
    print(rep.summary)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_steer(args) -> int:
    man = _manifest(args)
    m = resolve_model(man.model, man.model_options, man.base_dir)
    if man.z0 is None or man.z1 is None or man.eps is None:
        raise UsageError("steer needs z0, z1 and eps")
    res = steer(
        m, man.gfamily() if m.H is not None else None, man.z0, man.z1, man.eps, man.budget,
        dt=man.dt, max_time=man.max_time, attempts=man.attempts, seed=man.seed,
    )
    if res.control is not None:
        names = [m.variables[i] for i in res.control.indices]
        res.control.to_csv(man.out_path("control.csv"), [f"u_{n}" for n in names])
    write_report(man.out_path("steer_report.json"), "steer", man.to_dict(), res.to_dict(),
                 "pass" if res.success else "fail")
    for w in res.warnings:
        print(f"warning: {w}")
    if res.trap is not None:
        print(res.trap["message"])
    if res.success:
        print(f"verified control: T = {res.T:.6g}, terminal miss {res.verification.distance:.4g} <= {man.eps}")
        return EXIT_OK
    if res.verification is not None:
        print(f"steering failed: best terminal miss {res.verification.distance:.4g} > {man.eps}")
    else:
        closest = min((r["hitting"]["closest_distance"] for r in res.rounds), default=float("nan"))
        print(f"steering failed: no hitting path in {len(res.rounds)} round(s); closest approach {closest:.4g}")
    return EXIT_FAIL


# -- parser ------------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _run_options(p: argparse.ArgumentParser, steer_opts: bool = False) -> None:
    p.add_argument("manifest", nargs="?", help="experiment manifest (JSON)")
    p.add_argument("--model", help="model file or builtin name (instead of a manifest)")
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha", type=float, help="tempering parameter of g")
    p.add_argument("--family", choices=["linear", "logarithmic"])
    p.add_argument("--z0", type=_floats)
    p.add_argument("--out", help="output directory")
    if steer_opts:
        p.add_argument("--z1", type=_floats)
        p.add_argument("--eps", type=float)
        p.add_argument("--budget", type=int)
        p.add_argument("--max-time", type=float, dest="max_time")
        p.add_argument("--attempts", type=int)
    else:
        p.add_argument("--paths", type=int)
        p.add_argument("--burn-in", type=int, dest="burn_in")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochctl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="write a builtin model to a model file")
    p.add_argument("name", choices=sorted(BUILDERS))
    p.add_argument("--nstar", type=int, default=1, help="Euler truncation cutoff")
    p.add_argument("--config", help="chain configuration (JSON)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("check", help="assumption report for a model")
    p.add_argument("model", help="model file or builtin name")
    p.add_argument("--points", type=int, default=DEFAULT_RANK_POINTS)
    p.add_argument("--max-depth", type=int, default=4, dest="max_depth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="integrate the auxiliary SDE")
    _run_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stationarity", help="time averages against the invariant density")
    _run_options(p)
    p.set_defaults(func=cmd_stationarity)

    p = sub.add_parser("steer", help="find and verify a steering control")
    _run_options(p, steer_opts=True)
    p.set_defaults(func=cmd_steer)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError, ModelError, json.JSONDecodeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalBlowup, DomainError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
