"""Command line: cones, background, curvature, seed, solve, verify.

Exit codes: 0 success, 2 invalid config or arguments, 3 numeric failure,
4 check violation.  Each run writes ``<out>/<command>_report.json``; runs
that fail validation write nothing.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pydantic
import scipy
import sympy as sp
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .backgrounds import (
    BackgroundError,
    BackgroundSpec,
    bump_A,
    classify_A,
    make_background,
    manufactured_psi_expr,
    scaled_metric_A,
)
from .cones import ConeSpec, ConeViolation, GateError, validate_params
from .curvature import SPDError, curvature_report, modified_schouten, ricci
from .grid import Grid, GridError, ScalarField, SymTensorField
from .io import FieldFormatError, read_field, write_field, write_report
from .operator import OperatorContext
from .seed import SeedConfig, SeedError, build_morse, seed
from .solver import SolveError, SolverConfig, continuity_solve
from .verify import SUITES, run_suite

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------
# job schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackgroundModel(_Strict):
    kind: Literal["flat", "conformally_flat", "warped", "custom"] = "flat"
    phi: Optional[str] = None
    K: Optional[float] = None
    f: Optional[str] = None
    h: Optional[str] = None
    path: Optional[str] = None
    order: Optional[Literal[2, 4]] = None


class ParamsModel(_Strict):
    k: int = Field(ge=1)
    alpha: Literal[-1, 1] = -1
    tau: float = 0.0


class AModel(_Strict):
    kind: Literal["schouten", "bump", "scaled"] = "schouten"
    center: Optional[list[float]] = None
    radius: Optional[float] = Field(default=None, gt=0)
    height: float = Field(default=1.0, gt=0)
    expr: Optional[str] = None


class PsiModel(_Strict):
    constant: Optional[float] = Field(default=None, gt=0)
    expr: Optional[str] = None
    path: Optional[str] = None
    manufactured_u: Optional[str] = None


class SeedModel(_Strict):
    p0: list[float]
    r0: float = Field(gt=0)
    N_schedule: Optional[list[float]] = None
    delta: float = Field(default=1e-3, ge=0)
    v_floor: float = Field(default=-1.0, le=-1.0)
    margin_mode: Literal["absolute", "relative"] = "absolute"
    support_radius: float = Field(default=1.75, gt=0)
    target_radius: Optional[float] = Field(default=None, gt=0)
    amplitude: float = Field(default=1.0, gt=0)
    flow_steps: int = Field(default=64, ge=4)


class SolverModel(_Strict):
    newton_tol: float = Field(default=1e-9, gt=0)
    max_newton: int = Field(default=50, ge=1)
    krylov_tol: float = Field(default=1e-8, gt=0)
    homotopy_steps: int = Field(default=10, ge=1)
    guard_margin: float = Field(default=1e-4, gt=0)


class PathsModel(_Strict):
    seed: Optional[str] = None
    metric_out: str = "metric.nfld"
    field_out: Optional[str] = None


class JobConfig(_Strict):
    command: Literal["cones", "background", "curvature", "seed", "solve", "verify"]
    grid: Optional[list[int]] = None
    periods: Optional[list[float]] = None
    background: BackgroundModel = BackgroundModel()
    params: Optional[ParamsModel] = None
    A: AModel = AModel()
    psi: PsiModel = PsiModel(constant=1.0)
    seed_cfg: Optional[SeedModel] = None
    solver: SolverModel = SolverModel()
    paths: PathsModel = PathsModel()
    suite: Optional[str] = None
    suite_options: dict = Field(default_factory=dict)
    n: Optional[int] = Field(default=None, ge=3)
    k: Optional[int] = Field(default=None, ge=1)
    rng_seed: int = 0


# --------------------------------------------------------------------------
# builders


def _grid(job: JobConfig) -> Grid:
    if not job.grid:
        raise ValueError("this command needs a grid (config 'grid' or --grid)")
    return Grid(tuple(job.grid), tuple(job.periods or ()))


def _resolve(base: Path, p: Optional[str]) -> Optional[str]:
    if p is None:
        return None
    path = Path(p)
    return str(path if path.is_absolute() else (base / path).resolve())


def _metric(job: JobConfig, grid: Grid):
    b = job.background
    spec = BackgroundSpec(
        b.kind, grid,
        phi=b.phi and sp.sympify(b.phi), K=b.K,
        f=b.f and sp.sympify(b.f), h=b.h and sp.sympify(b.h),
        path=b.path, order=b.order,
    )
    return make_background(spec)


def _params(job: JobConfig, n: int):
    if job.params is None:
        raise ValueError("this command needs 'params'")
    p = job.params
    if p.k > n:
        raise ValueError(f"k={p.k} exceeds the dimension {n}")
    return validate_params(n, p.alpha, p.tau, ConeSpec(n, p.k, rng_seed=job.rng_seed))


def _A(job: JobConfig, g, params) -> SymTensorField:
    a = job.A
    if a.kind == "schouten":
        n = params.n
        scale = (n - 2) / (params.alpha * (params.tau - 1))
        return SymTensorField(g.grid, scale * modified_schouten(g, params.tau, params.alpha).values)
    if a.kind == "bump":
        if a.center is None or a.radius is None:
            raise ValueError("bump A needs 'center' and 'radius'")
        return bump_A(g, a.center, a.radius, a.height)
    if a.expr is None:
        raise ValueError("scaled A needs 'expr'")
    return scaled_metric_A(g, sp.sympify(a.expr))


def _psi(job: JobConfig, grid: Grid, g, A, params) -> ScalarField:
    ps = job.psi
    if ps.manufactured_u is not None:
        if g.expr is None or A.expr is None:
            raise ValueError("manufactured psi needs closed-form metric and A")
        return ScalarField.sample(grid, manufactured_psi_expr(g.expr, A.expr, sp.sympify(ps.manufactured_u), params))
    if ps.path is not None:
        return ScalarField(grid, read_field(ps.path).values)
    if ps.expr is not None:
        return ScalarField.sample(grid, sp.sympify(ps.expr))
    return ScalarField.constant(grid, ps.constant if ps.constant is not None else 1.0)


def _seed_cfg(job: JobConfig) -> SeedConfig:
    s = job.seed_cfg
    if s is None:
        raise ValueError("this command needs 'seed_cfg'")
    kw = dict(p0=tuple(s.p0), r0=s.r0, delta=s.delta, v_floor=s.v_floor, margin_mode=s.margin_mode)
    if s.N_schedule is not None:
        kw["N_schedule"] = tuple(s.N_schedule)
    return SeedConfig(**kw)


def _solver_cfg(job: JobConfig, seed_delta: float) -> SolverConfig:
    s = job.solver
    return SolverConfig(
        newton_tol=s.newton_tol, max_newton=s.max_newton, krylov_tol=s.krylov_tol,
        homotopy_steps=s.homotopy_steps, guard_margin=s.guard_margin, seed_delta=seed_delta,
    )


# --------------------------------------------------------------------------
# commands; each returns (results, fields-to-write)


def cmd_cones(job: JobConfig, args):
    n, k = job.n, job.k
    if n is None or k is None:
        raise ValueError("cones needs --n and --k")
    if k > n:
        raise ValueError(f"need k <= n, got k={k}, n={n}")
    c = ConeSpec(n, k, rng_seed=job.rng_seed)
    return {"cone": c.to_json(), "kappa_expected": n - k, "checks": {"kappa": c.kappa == n - k}}, {}


def cmd_background(job: JobConfig, args):
    grid = _grid(job)
    g = _metric(job, grid)
    res = {"background": job.background.model_dump(), "grid": grid.to_json()}
    if job.params is not None:
        params = _params(job, grid.n)
        res["classification"] = classify_A(g, modified_schouten(g, params.tau, params.alpha), params.k)
    return res, {job.paths.metric_out: (grid, g.tensor.values)}


def cmd_curvature(job: JobConfig, args):
    grid = _grid(job)
    g = _metric(job, grid)
    res = curvature_report(g)
    fields = {}
    if job.paths.field_out:
        fields[job.paths.field_out] = (grid, ricci(g).values)
    return res, fields


def _context(job: JobConfig):
    grid = _grid(job)
    g = _metric(job, grid)
    params = _params(job, grid.n)
    A = _A(job, g, params)
    psi = _psi(job, grid, g, A, params)
    return OperatorContext(g, A, params, psi)


def cmd_seed(job: JobConfig, args):
    ctx = _context(job)
    cfg = _seed_cfg(job)
    s = job.seed_cfg
    morse = build_morse(ctx.grid, cfg, s.support_radius, s.target_radius, s.amplitude, s.flow_steps)
    u, N, rep = seed(ctx, cfg, morse)
    out = job.paths.field_out or "seed.nfld"
    return {"seed": rep, "N": N}, {out: (ctx.grid, u.values)}


def cmd_solve(job: JobConfig, args):
    ctx = _context(job)
    delta = job.seed_cfg.delta if job.seed_cfg else 1e-3
    if job.paths.seed:
        u0 = ScalarField(ctx.grid, read_field(job.paths.seed).values)
        seed_rep = {"source": job.paths.seed}
    else:
        cfg = _seed_cfg(job)
        s = job.seed_cfg
        morse = build_morse(ctx.grid, cfg, s.support_radius, s.target_radius, s.amplitude, s.flow_steps)
        u0, _, seed_rep = seed(ctx, cfg, morse)
    scfg = _solver_cfg(job, delta)
    u, rep = continuity_solve(ctx, u0, scfg)
    res = {"seed": seed_rep, "solve": rep.to_json(), "solver_config": scfg.to_json()}
    checks = {
        "cone_guard": rep.guard_respected(scfg.guard_margin),
        "elliptic": rep.elliptic_throughout(),
        "residual": rep.final_residual <= scfg.newton_tol,
    }
    res["checks"] = checks
    out = job.paths.field_out or "solution.nfld"
    if args.out is not None:
        _write_trace(Path(args.out) / "solve_trace.csv", rep)
    if not all(checks.values()):
        raise CheckFailed("solve checks failed", res)
    return res, {out: (ctx.grid, u.values)}


def _write_trace(path: Path, rep):
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["newton_iter", "residual", "margin_min", "symbol_min", "symbol_max", "c2_sup", "u_min", "u_max"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for it in rep.iterates:
            w.writerow([it.get(c) for c in cols])


def cmd_verify(job: JobConfig, args):
    name = job.suite
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {list(SUITES)}")
    opts = dict(job.suite_options)
    opts.setdefault("rng_seed", job.rng_seed)
    try:
        rep = run_suite(name, **opts)
    except TypeError as exc:
        raise ValueError(f"bad options for suite {name}: {exc}") from None
    if not rep["passed"]:
        raise CheckFailed(f"suite {name} failed", rep)
    return rep, {}


COMMANDS = {
    "cones": cmd_cones,
    "background": cmd_background,
    "curvature": cmd_curvature,
    "seed": cmd_seed,
    "solve": cmd_solve,
    "verify": cmd_verify,
}


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON job file")
    common.add_argument("--grid", help="grid sizes, e.g. 32,32,32")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--deterministic", action="store_true", help="fixed seeds and sequential reductions")
    common.add_argument("--rng-seed", type=int, default=None)

    p = argparse.ArgumentParser(prog="confbend", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("cones", parents=[common], help="cone constants kappa and theta")
    c.add_argument("--n", type=int)
    c.add_argument("--k", type=int)
    sub.add_parser("background", parents=[common], help="build a background metric")
    sub.add_parser("curvature", parents=[common], help="curvature report of a background")
    sub.add_parser("seed", parents=[common], help="admissible seed u = exp(N v)")
    sub.add_parser("solve", parents=[common], help="continuity solve from a seed")
    v = sub.add_parser("verify", parents=[common], help="run a property suite")
    v.add_argument("suite", choices=SUITES)
    v.add_argument("--sweep", action="store_true", help="lemma23: run the full combination sweep")
    v.add_argument("--samples", type=int)
    return p


def _job_from_args(args) -> tuple[JobConfig, Path]:
    data: dict = {}
    base = Path.cwd()
    if args.config:
        cfg_path = Path(args.config)
        data = json.loads(cfg_path.read_text())
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        base = cfg_path.resolve().parent
    data.setdefault("command", args.command)
    if data["command"] != args.command:
        raise ValueError(f"config is for command {data['command']!r}, not {args.command!r}")
    if args.grid:
        data["grid"] = [int(s) for s in args.grid.split(",")]
    if args.rng_seed is not None:
        data["rng_seed"] = args.rng_seed
    if args.command == "cones":
        for key in ("n", "k"):
            if getattr(args, key) is not None:
                data[key] = getattr(args, key)
    if args.command == "verify":
        data["suite"] = args.suite
        opts = data.setdefault("suite_options", {})
        if args.samples is not None:
            if args.suite not in ("theorem21", "addistruc"):
                raise ValueError("--samples applies to theorem21 and addistruc")
            opts["samples"] = args.samples
        if args.suite == "lemma23":
            opts.setdefault("count", 200 if args.sweep else 20)
        if args.suite == "conformal-identity" and args.grid:
            opts["grids"] = tuple(data.pop("grid"))
    job = JobConfig.model_validate(data)
    # resolve every input path before running
    job.background.path = _resolve(base, job.background.path)
    job.psi.path = _resolve(base, job.psi.path)
    job.paths.seed = _resolve(base, job.paths.seed)
    for p in (job.background.path, job.psi.path, job.paths.seed):
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")
    return job, base


def _versions() -> dict:
    return {
        "confbend": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sp.__version__,
        "pydantic": pydantic.__version__,
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code not in (0, None) else EXIT_OK
    try:
        job, _ = _job_from_args(args)
    except (pydantic.ValidationError, ValueError, FileNotFoundError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    out_dir = Path(args.out) if args.out else Path.cwd()
    report = {
        "command": job.command,
        "config": job.model_dump(),
        "deterministic": bool(args.deterministic),
        "versions": _versions(),
    }
    start = time.perf_counter()
    fields = {}
    try:
        results, fields = COMMANDS[job.command](job, args)
        code = EXIT_OK
        report["status"] = "ok"
    except CheckFailed as exc:
        results, code = exc.report, EXIT_CHECK
        report["status"] = f"check violation: {exc}"
    except (SeedError, SolveError, BackgroundError) as exc:
        rep = exc.report.to_json() if hasattr(exc.report, "to_json") else exc.report
        results, code = {"diagnostics": rep}, EXIT_NUMERIC
        report["status"] = f"numeric failure: {exc}"
    except (ConeViolation, SPDError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        results, code = {}, EXIT_NUMERIC
        report["status"] = f"numeric failure: {exc}"
    except (GateError, GridError, FieldFormatError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    report["results"] = results
    report["elapsed_s"] = time.perf_counter() - start

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if code == EXIT_OK:
        for name, (grid, values) in fields.items():
            written.append(str(write_field(out_dir / name, grid, values)))
    report["outputs"] = written
    write_report(out_dir / f"{job.command}_report.json", report)
    print(json.dumps({"command": job.command, "status": report["status"], "outputs": written}))
    return code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
