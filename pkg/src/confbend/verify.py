"""Property suites: cone constants, the rho-vector sweep, conformal identity, linearization, covariance.

Each suite returns a JSON-ready dict with a boolean ``passed``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import sympy as sp

from .cones import (
    ConeSpec,
    GateError,
    check_addistruc,
    check_theorem21,
    in_cone,
    tau_threshold,
    validate_params,
)
from .curvature import MetricField, conformal_schouten, modified_schouten
from .grid import Grid, ScalarField, SymTensorField, max_norm, observed_order, symbols
from .operator import OperatorContext, evaluate, linearization, residual
from .solver import SolverConfig, covariance_check, initial_psi

SUITES = ("theorem21", "lemma23", "addistruc", "conformal-identity", "linearization", "covariance")


@lru_cache(maxsize=None)
def cone(n: int, k: int) -> ConeSpec:
    return ConeSpec(n, k)


# --------------------------------------------------------------------------
# random smooth generators


def random_trig(rng: np.random.Generator, n: int, terms: int = 3, amp: float = 0.2, maxfreq: int = 1):
    """Sum of ``terms`` random low-frequency cosines; sup norm <= amp."""
    xs = symbols(n)
    expr = sp.S(0)
    for _ in range(terms):
        m = rng.integers(-maxfreq, maxfreq + 1, size=n)
        if not m.any():
            m[rng.integers(n)] = 1
        phase = sp.Float(float(rng.uniform(0, 2 * math.pi)), 12)
        coef = sp.Float(float(rng.uniform(-1, 1)) * amp / terms, 12)
        expr += coef * sp.cos(sum(int(mi) * x for mi, x in zip(m, xs)) + phase)
    return expr


def random_metric(rng: np.random.Generator, n: int, amp: float = 0.15) -> sp.Matrix:
    """e^{2 phi} (I + S) with S a small symmetric trig matrix; SPD by diagonal dominance."""
    off = amp / max(1, n - 1)
    S = sp.zeros(n, n)
    for i in range(n):
        for j in range(i, n):
            S[i, j] = S[j, i] = random_trig(rng, n, 2, amp if i == j else off)
    phi = random_trig(rng, n, 2, 0.2)
    return sp.exp(2 * phi) * (sp.eye(n) + S)


# --------------------------------------------------------------------------
# suites


def suite_theorem21(samples: int = 10_000, ns=(3, 4), rng_seed: int = 0) -> dict:
    rows = []
    for n in ns:
        for k in range(1, n + 1):
            rep = check_theorem21(cone(n, k), samples, rng_seed)
            rows.append(rep)
    return {"suite": "theorem21", "passed": all(r["violations"] == 0 for r in rows), "cones": rows}


def gate_passing_combinations(count: int = 200, ns=(3, 4), rng_seed: int = 0):
    """``count`` gate-passing (n, alpha, tau, k), half with alpha = -1 and half with alpha = +1."""
    rng = np.random.default_rng(rng_seed)
    combos = []
    pool = [(n, k) for n in ns for k in range(1, n + 1)]
    attempts = 0
    while len(combos) < count:
        attempts += 1
        if attempts > 100 * count:
            raise RuntimeError("could not collect enough gate-passing combinations")
        n, k = pool[rng.integers(len(pool))]
        alpha = -1 if len(combos) % 2 == 0 else 1
        if alpha == -1:
            tau = float(rng.uniform(-5.0, 1.0))
        else:
            tau = tau_threshold(n, cone(n, k)) + float(rng.exponential(2.0))
        try:
            p = validate_params(n, alpha, tau, cone(n, k))
        except GateError:
            continue
        combos.append(p)
    return combos


def suite_lemma23(count: int = 200, ns=(3, 4), rng_seed: int = 0) -> dict:
    rows, bad = [], []
    for p in gate_passing_combinations(count, ns, rng_seed):
        vec = np.ones(p.n)
        vec[-1] = 1.0 - p.rho
        ok = bool(in_cone(vec, p.k))
        rows.append({"n": p.n, "alpha": p.alpha, "tau": p.tau, "k": p.k, "rho": p.rho, "member": ok})
        if not ok:
            bad.append(rows[-1])
    return {"suite": "lemma23", "combinations": len(rows), "failures": bad, "passed": not bad, "rows": rows}


def suite_addistruc(samples: int = 2000, ns=(3, 4), rng_seed: int = 0) -> dict:
    rows = [check_addistruc(cone(n, k), samples, rng_seed) for n in ns for k in range(1, n + 1)]
    ok = all(r["violations"] == 0 and r["boundary_ok"] for r in rows)
    return {"suite": "addistruc", "passed": ok, "cones": rows}


def conformal_discrepancy(metric, u_expr, grid: Grid, tau: float, alpha: int) -> float:
    """Max-norm gap between the transformation law and direct curvature of e^{2u} g."""
    g = MetricField.sample(grid, metric)
    u = ScalarField.sample(grid, u_expr)
    law = conformal_schouten(g, u, tau, alpha).values
    direct = modified_schouten(g.conformal(u), tau, alpha).values
    return max_norm(law - direct)


def suite_conformal_identity(grids=(16, 32), pairs: int = 5, n: int = 3, rng_seed: int = 0,
                             band=(1.7, 2.3)) -> dict:
    rng = np.random.default_rng(rng_seed)
    rows = []
    for i in range(pairs):
        metric = random_metric(rng, n)
        u = random_trig(rng, n, 3, 0.3)
        tau = float(rng.choice([0.0, 0.5, 2.0, 3.0]))
        alpha = int(rng.choice([-1, 1]))
        errs = [conformal_discrepancy(metric, u, Grid.cube(n, s), tau, alpha) for s in grids]
        orders = [observed_order(a, b, grids[j + 1] // grids[j]) for j, (a, b) in enumerate(zip(errs, errs[1:]))]
        rows.append({"pair": i, "tau": tau, "alpha": alpha, "errors": errs, "orders": orders,
                     "ok": all(band[0] <= o <= band[1] for o in orders)})
    return {"suite": "conformal-identity", "grids": list(grids), "band": list(band),
            "passed": all(r["ok"] for r in rows), "pairs": rows}


def random_admissible_context(rng: np.random.Generator, grid: Grid, min_margin: float = 0.1, tries: int = 50):
    """Random (ctx, u) with u admissible at cone margin >= min_margin everywhere."""
    n = grid.n
    for _ in range(tries):
        k = int(rng.integers(1, n + 1))
        alpha = int(rng.choice([-1, 1]))
        c = cone(n, k)
        tau = float(rng.uniform(-2.0, 0.8)) if alpha == -1 else tau_threshold(n, c) + float(rng.uniform(0.5, 3.0))
        try:
            params = validate_params(n, alpha, tau, c)
        except GateError:
            continue
        metric = random_metric(rng, n)
        a = 2.0 + random_trig(rng, n, 2, 0.5)
        g = MetricField.sample(grid, metric)
        A = SymTensorField(grid, g.tensor.values * ScalarField.sample(grid, a).values[..., None])
        psi = ScalarField.sample(grid, 1.0 + random_trig(rng, n, 2, 0.3))
        ctx = OperatorContext(g, A, params, psi)
        u = ScalarField.sample(grid, random_trig(rng, n, 3, 0.2))
        try:
            ev = evaluate(ctx, u)
        except Exception:
            continue
        if ev.margin.min() >= min_margin:
            return ctx, u
    raise RuntimeError("no admissible random configuration found")


def linearization_error(ctx: OperatorContext, u: ScalarField, w: ScalarField, eps: float = 1e-5) -> float:
    """Relative max-norm gap between DF[u]w and a central difference of F."""
    lin = linearization(ctx, u).apply(w.values)
    up = residual(ctx, u.values + eps * w.values).values
    dn = residual(ctx, u.values - eps * w.values).values
    fd = (up - dn) / (2 * eps)
    return max_norm(lin - fd) / max(max_norm(lin), 1e-300)


def suite_linearization(configs: int = 20, size: int = 16, rng_seed: int = 0, tol: float = 1e-6) -> dict:
    rng = np.random.default_rng(rng_seed)
    grid = Grid.cube(3, size)
    rows = []
    for i in range(configs):
        ctx, u = random_admissible_context(rng, grid)
        w = ScalarField.sample(grid, random_trig(rng, 3, 3, 1.0, maxfreq=2))
        err = linearization_error(ctx, u, w)
        rows.append({"config": i, "k": ctx.params.k, "alpha": ctx.params.alpha, "tau": ctx.params.tau,
                     "relative_error": err, "ok": err <= tol})
    return {"suite": "linearization", "tolerance": tol, "passed": all(r["ok"] for r in rows), "configs": rows}


def suite_covariance(scale: float = 4.0, size: int = 16, rng_seed: int = 0) -> dict:
    """Exact solution by construction (psi := psi_0 of u), then the shift identity."""
    rng = np.random.default_rng(rng_seed)
    grid = Grid.cube(3, size)
    ctx, u = random_admissible_context(rng, grid)
    ctx = ctx.with_psi(initial_psi(ctx, u))
    rep = covariance_check(ctx, u, scale, SolverConfig())
    return {"suite": "covariance", "passed": rep["ok"], **rep}


def run_suite(name: str, **kw) -> dict:
    table = {
        "theorem21": suite_theorem21,
        "lemma23": suite_lemma23,
        "addistruc": suite_addistruc,
        "conformal-identity": suite_conformal_identity,
        "linearization": suite_linearization,
        "covariance": suite_covariance,
    }
    if name not in table:
        raise KeyError(f"unknown suite {name!r}; choose from {SUITES}")
    return table[name](**kw)
