"""Newton-Krylov for F[u] = 0 with a cone-guarded line search, and a homotopy in psi.

The Krylov solve is matrix free (restarted GMRES on ``Linearization.apply``)
with a Jacobi preconditioner: center weights of the second-order stencils
times a^{ii}, plus the zeroth-order coefficient -2 s c psi e^{2 s u}.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .cones import ConeViolation
from .curvature import covariant_derivatives
from .grid import ScalarField
from .operator import Evaluation, Linearization, OperatorContext, evaluate


class SolveError(RuntimeError):
    """Newton or homotopy failure; ``report`` carries the trace so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-9
    max_newton: int = 50
    krylov_tol: float = 1e-8
    krylov_restart: int = 60
    krylov_maxiter: int = 40
    homotopy_steps: int = 10
    min_step: float = 1.0 / 256.0
    guard_margin: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    decrease: float = 0.9
    seed_delta: float = 1e-3

    def __post_init__(self):
        positive = ("newton_tol", "krylov_tol", "min_step", "guard_margin", "backtrack", "decrease")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_newton", "krylov_restart", "krylov_maxiter", "homotopy_steps", "max_backtracks"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.backtrack < 1 or not self.decrease < 1:
            raise ValueError("backtrack and decrease factors must be < 1")
        if not self.guard_margin < self.seed_delta:
            raise ValueError("guard_margin must be smaller than the seed margin")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    homotopy: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    converged: bool = False
    message: str = ""
    elapsed: float = 0.0

    @property
    def final_residual(self) -> float | None:
        return self.iterates[-1]["residual"] if self.iterates else None

    def guard_respected(self, guard: float) -> bool:
        return all(it["margin_min"] >= guard for it in self.iterates)

    def elliptic_throughout(self) -> bool:
        return all(it["symbol_min"] > 0 for it in self.iterates)

    def c2_sup(self) -> float:
        return max((it["c2_sup"] for it in self.iterates), default=float("nan"))

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "message": self.message,
            "final_residual": self.final_residual,
            "c2_sup": self.c2_sup(),
            "elapsed_s": self.elapsed,
            "homotopy": self.homotopy,
            "iterates": self.iterates,
        }


def diagnostics(ctx: OperatorContext, ev: Evaluation, lin: Linearization) -> dict:
    """Per-iterate numbers: residual, margin, symbol range, C^2 and C^0 monitors."""
    g = ctx.g
    hess = covariant_derivatives(g, ev.u)[1]
    Li = g.chol_inv
    hn = np.sqrt(np.sum((Li @ hess @ np.swapaxes(Li, -1, -2)) ** 2, axis=(-1, -2)))
    sym = lin.symbol_eigenvalues()
    return {
        "residual": ev.res_norm,
        "margin_min": float(ev.margin.min()),
        "symbol_min": float(sym[..., 0].min()),
        "symbol_max": float(sym[..., -1].max()),
        "c2_sup": float(np.max(hn + g.inner(ev.du, ev.du))),
        "u_min": float(ev.u.min()),
        "u_max": float(ev.u.max()),
    }


def _krylov(lin: Linearization, rhs: np.ndarray, cfg: SolverConfig):
    shape = rhs.shape
    size = rhs.size
    diag = lin.diagonal().ravel()
    diag = np.where(np.abs(diag) > 0, diag, 1.0)
    A = LinearOperator((size, size), matvec=lambda x: lin.apply(x.reshape(shape)).ravel(), dtype=float)
    M = LinearOperator((size, size), matvec=lambda x: x / diag, dtype=float)
    w, info = gmres(
        A, rhs.ravel(), rtol=cfg.krylov_tol, atol=0.0,
        restart=cfg.krylov_restart, maxiter=cfg.krylov_maxiter, M=M,
    )
    return w.reshape(shape), int(info)


def _try(ctx, u):
    try:
        return evaluate(ctx, u)
    except ConeViolation:
        return None


def newton(ctx: OperatorContext, u0, cfg: SolverConfig | None = None, report: SolveReport | None = None):
    """Damped Newton from u0; returns ``(u, report)`` or raises SolveError."""
    cfg = cfg or SolverConfig()
    report = report if report is not None else SolveReport()
    u = np.array(u0.values if isinstance(u0, ScalarField) else u0, dtype=float)
    try:
        ev = evaluate(ctx, u)
    except ConeViolation as exc:
        raise SolveError(f"start is not admissible: {exc}", report) from exc
    if ev.margin.min() < cfg.guard_margin:
        raise SolveError(f"start margin {ev.margin.min():.3e} below guard {cfg.guard_margin}", report)
    for it in range(cfg.max_newton + 1):
        lin = Linearization(ctx, ev)
        diag = diagnostics(ctx, ev, lin)
        diag["newton_iter"] = it
        report.iterates.append(diag)
        if ev.res_norm <= cfg.newton_tol:
            return ScalarField(ctx.grid, ev.u), report
        if it == cfg.max_newton:
            break
        w, info = _krylov(lin, -ev.F, cfg)
        diag["krylov_info"] = info
        step = 1.0
        for _ in range(cfg.max_backtracks + 1):
            cand = _try(ctx, ev.u + step * w)
            if (
                cand is not None
                and cand.margin.min() >= cfg.guard_margin
                and cand.res_norm <= cfg.decrease * ev.res_norm
            ):
                break
            step *= cfg.backtrack
        else:
            raise SolveError(f"line search stalled at Newton iteration {it}", report)
        diag["step"] = step
        ev = cand
    raise SolveError(f"no convergence in {cfg.max_newton} Newton iterations", report)


def initial_psi(ctx: OperatorContext, u) -> ScalarField:
    """psi_0 = f(lambda(g^-1 V[u])) e^{-2 s u} / c, so that u solves the t = 0 problem."""
    ev = evaluate(ctx, u)
    p = ctx.params
    return ScalarField(ctx.grid, ev.fval * np.exp(-2.0 * p.varsigma * ev.u) / p.c)


def continuity_solve(ctx: OperatorContext, u_seed, cfg: SolverConfig | None = None):
    """Follow psi_t = (1-t) psi_0 + t psi_target from the seed to t = 1."""
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    report = SolveReport()
    u = u_seed.values if isinstance(u_seed, ScalarField) else np.asarray(u_seed, dtype=float)
    try:
        psi0 = initial_psi(ctx, u).values
    except ConeViolation as exc:
        raise SolveError(f"seed is not admissible: {exc}", report) from exc
    psi1 = ctx.psi.values
    if not (np.all(psi0 > 0) and np.all(psi1 > 0)):
        raise SolveError("homotopy endpoints must be positive", report)
    t, dt = 0.0, 1.0 / cfg.homotopy_steps
    while t < 1.0:
        t_try = min(1.0, t + dt)
        psi_t = (1.0 - t_try) * psi0 + t_try * psi1
        ctx_t = ctx.with_psi(ScalarField(ctx.grid, psi_t))
        mark = len(report.iterates)
        try:
            sol, _ = newton(ctx_t, u, cfg, report)
        except SolveError:
            del report.iterates[mark:]
            report.homotopy.append({"t": t_try, "accepted": False, "dt": dt})
            dt *= 0.5
            if dt < cfg.min_step:
                report.message = f"homotopy step underflow; last good t = {t}"
                report.elapsed = time.perf_counter() - start
                raise SolveError(report.message, report) from None
            continue
        u = sol.values
        t = t_try
        report.homotopy.append({
            "t": t,
            "accepted": True,
            "dt": dt,
            "newton_iters": len(report.iterates) - mark - 1,
            "residual": report.iterates[-1]["residual"],
        })
    report.converged = True
    report.message = "converged"
    report.elapsed = time.perf_counter() - start
    return ScalarField(ctx.grid, u), report


def uniqueness_check(ctx: OperatorContext, seeds, cfg: SolverConfig | None = None, tol: float | None = None) -> dict:
    """Solve from every seed and compare the solutions pairwise in max norm."""
    cfg = cfg or SolverConfig()
    if len(seeds) < 2:
        raise ValueError("uniqueness_check needs at least two seeds")
    tol = 100.0 * cfg.newton_tol if tol is None else tol
    sols = [continuity_solve(ctx, s, cfg)[0].values for s in seeds]
    diffs = [
        float(np.max(np.abs(sols[i] - sols[j])))
        for i in range(len(sols))
        for j in range(i + 1, len(sols))
    ]
    return {
        "pairwise_max_diff": diffs,
        "max_diff": max(diffs),
        "tolerance": tol,
        "unique": max(diffs) <= tol,
        "solutions": sols,
    }


def covariance_check(ctx: OperatorContext, u, s: float, cfg: SolverConfig | None = None) -> dict:
    """u - ln(s)/(2 varsigma) must solve the problem with psi scaled by s."""
    cfg = cfg or SolverConfig()
    if not s > 0:
        raise ValueError("scale s must be positive")
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    shifted = vals - math.log(s) / (2.0 * ctx.params.varsigma)
    ctx_s = ctx.with_psi(ScalarField(ctx.grid, s * ctx.psi.values))
    res = evaluate(ctx_s, shifted).res_norm
    base = evaluate(ctx, vals).res_norm
    return {
        "scale": s,
        "residual_original": base,
        "residual_scaled": res,
        "tolerance": 10.0 * cfg.newton_tol,
        "ok": res <= 10.0 * cfg.newton_tol,
    }
