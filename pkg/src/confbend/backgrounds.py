"""Analytic background metrics, synthetic A-fields, admissibility scans and manufactured data."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .cones import ConeSpec, EquationParams, normalized_margin
from .curvature import MetricField, modified_schouten, symbolic_christoffel
from .grid import Grid, ScalarField, SymTensorField, symbols
from .operator import OperatorContext, gen_eigen_array

KINDS = ("flat", "conformally_flat", "warped", "custom")
WARPED_K_MIN = 2.0 * math.sqrt(2.0)


class BackgroundError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


@dataclass(frozen=True)
class BackgroundSpec:
    """kind plus its data: ``phi`` (conformally_flat), ``K`` or ``f``/``h`` (warped), ``path`` (custom).

    Generators are sympy expressions or strings in x1..xn.
    """

    kind: str
    grid: Grid
    phi: object = None
    K: float | None = None
    f: object = None
    h: object = None
    path: str | None = None
    order: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown background kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "conformally_flat" and self.phi is None:
            raise ValueError("conformally_flat needs a phi generator")
        if self.kind == "warped":
            if self.grid.n != 3:
                raise ValueError("the warped family is three-dimensional")
            if self.K is None and (self.f is None or self.h is None):
                raise ValueError("warped needs K or both f and h generators")
        if self.kind == "custom" and not self.path:
            raise ValueError("custom needs an NFLD1 path")


def warped_profiles(K=None, f=None, h=None):
    """(f, h) as sympy expressions in x1; K may itself be an expression in x1."""
    x = symbols(3)[0]
    if f is not None:
        return sp.sympify(f), sp.sympify(h)
    K = sp.sympify(K)
    return K * sp.sin(x), -K * sp.cos(x)


def warped_matrix(K=None, f=None, h=None) -> sp.Matrix:
    f, h = warped_profiles(K, f, h)
    return sp.diag(1, sp.exp(2 * f), sp.exp(2 * h))


def warped_scalar_exact(K=None, f=None, h=None):
    """R = -2 (f'' + f'^2 + h'' + h'^2 + f'h') for dx^2 + e^{2f}dy^2 + e^{2h}dz^2."""
    x = symbols(3)[0]
    f, h = warped_profiles(K, f, h)
    fp, hp = sp.diff(f, x), sp.diff(h, x)
    return -2 * (sp.diff(fp, x) + fp**2 + sp.diff(hp, x) + hp**2 + fp * hp)


def warped_ricci_exact(K=None, f=None, h=None) -> sp.Matrix:
    """Ricci tensor of the warped metric (diagonal, coordinate components)."""
    x = symbols(3)[0]
    f, h = warped_profiles(K, f, h)
    fp, hp = sp.diff(f, x), sp.diff(h, x)
    fpp, hpp = sp.diff(fp, x), sp.diff(hp, x)
    r11 = -(fpp + fp**2 + hpp + hp**2)
    r22 = -(fpp + fp**2 + fp * hp) * sp.exp(2 * f)
    r33 = -(hpp + hp**2 + fp * hp) * sp.exp(2 * h)
    return sp.diag(r11, r22, r33)


def make_background(spec: BackgroundSpec) -> MetricField:
    grid = spec.grid
    n = grid.n
    if spec.kind == "flat":
        return MetricField(SymTensorField.identity(grid), spec.order or 2)
    if spec.kind == "conformally_flat":
        phi = sp.sympify(spec.phi)
        return MetricField.sample(grid, sp.exp(2 * phi) * sp.eye(n), spec.order or 2)
    if spec.kind == "warped":
        # second-order stencils misjudge the sign of R for K near 3 at desk resolution
        return MetricField.sample(grid, warped_matrix(spec.K, spec.f, spec.h), spec.order or 4)
    from .io import read_field

    field = read_field(spec.path)
    if field.grid.shape != grid.shape:
        raise ValueError(f"custom metric grid {field.grid.shape} differs from requested {grid.shape}")
    return MetricField(SymTensorField(field.grid, field.values), spec.order or 2)


# --------------------------------------------------------------------------
# synthetic A-fields


def bump_profile(r, radius: float):
    rho2 = np.minimum((np.asarray(r) / radius) ** 2, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.exp(1.0 - 1.0 / (1.0 - rho2))
    return np.where(rho2 < 1.0, out, 0.0)


def bump_A(g: MetricField, p0, radius: float, height: float = 1.0) -> SymTensorField:
    """A = b g with b = height * bump(|x - p0|) supported in the coordinate ball B(p0, radius)."""
    grid = g.grid
    pts = np.stack(grid.coordinates(), axis=-1)
    r = np.linalg.norm(grid.periodic_delta(pts, p0), axis=-1)
    b = height * bump_profile(r, radius)
    return SymTensorField(grid, g.tensor.values * b[..., None])


def scaled_metric_A(g: MetricField, a_expr) -> SymTensorField:
    """A = a(x) g from a closed-form positive scalar a."""
    a = ScalarField.sample(g.grid, a_expr)
    expr = None if g.expr is None else g.expr * a.expr
    return SymTensorField(g.grid, g.tensor.values * a.values[..., None], expr)


# --------------------------------------------------------------------------
# admissibility classification

CLASSES = ("inadmissible", "weak_with_strict_point", "strict")


def classify_A(g: MetricField, A: SymTensorField, k: int, weak_tol: float = 1e-10) -> dict:
    """Grid scan of lambda(g^-1 A) against Gamma_k, with witness points."""
    lam = gen_eigen_array(A.full(), g).lambdas
    cone = ConeSpec(g.n, k)
    marg = cone.margin(lam)
    rel = normalized_margin(lam, k)
    grid = g.grid
    worst = np.unravel_index(int(np.argmin(marg)), grid.shape)
    best = np.unravel_index(int(np.argmax(marg)), grid.shape)
    if np.all(marg > 0):
        cls = "strict"
    elif rel.min() >= -weak_tol and marg.max() > 0:
        cls = "weak_with_strict_point"
    else:
        cls = "inadmissible"
    return {
        "class": cls,
        "k": k,
        "margin_min": float(marg.min()),
        "margin_max": float(marg.max()),
        "normalized_margin_min": float(rel.min()),
        "worst_point": grid.point(worst).tolist(),
        "worst_lambda": lam[worst].tolist(),
        "strict_witness": grid.point(best).tolist() if marg.max() > 0 else None,
    }


def classify_metric(g: MetricField, k: int, tau: float, alpha: int) -> dict:
    return classify_A(g, modified_schouten(g, tau, alpha), k)


def _meets(found: str, wanted: str) -> bool:
    return CLASSES.index(found) >= CLASSES.index(wanted) if wanted != "inadmissible" else found == wanted


def find_admissible_background(
    k: int,
    alpha: int,
    tau: float,
    grid: Grid,
    K_values=None,
    want: str = "strict",
    refine_check: bool = True,
):
    """Scan the warped family over K and return the first metric of class ``want``.

    The classification is repeated on the once-refined grid before a match
    is accepted.  Raises BackgroundError with the full scan when nothing qualifies.
    """
    if want not in CLASSES:
        raise ValueError(f"want must be one of {CLASSES}")
    if K_values is None:
        K_values = np.linspace(WARPED_K_MIN, 6.0, 12)
    scan = []
    for K in K_values:
        spec = BackgroundSpec("warped", grid, K=float(K))
        g = make_background(spec)
        rep = classify_metric(g, k, tau, alpha)
        rep["K"] = float(K)
        scan.append(rep)
        if not _meets(rep["class"], want):
            continue
        if refine_check:
            fine = make_background(BackgroundSpec("warped", grid.refine(2), K=float(K)))
            rep["refined_class"] = classify_metric(fine, k, tau, alpha)["class"]
            if rep["refined_class"] != rep["class"]:
                continue
        return g, {"match": rep, "scan": scan}
    raise BackgroundError(f"no warped background of class {want!r} for k={k} in the scanned range", {"scan": scan})


# --------------------------------------------------------------------------
# manufactured problems


def _sigma_sym(M: sp.Matrix, k: int):
    n = M.shape[0]
    return sum(M.extract(list(c), list(c)).det() for c in itertools.combinations(range(n), k))


def manufactured_psi_expr(metric, A, u, params: EquationParams):
    """Closed-form psi with f(lambda(g^-1 V[u])) = c psi e^{2 s u} exactly."""
    n = params.n
    xs = symbols(n)
    gm = sp.Matrix(metric)
    u = sp.sympify(u)
    gam = symbolic_christoffel(gm, n)
    du = [sp.diff(u, x) for x in xs]
    hess = sp.Matrix(n, n, lambda i, j: sp.diff(u, xs[i], xs[j]) - sum(gam[m][i][j] * du[m] for m in range(n)))
    ginv = gm.inv()
    lap = sum(ginv[i, j] * hess[i, j] for i in range(n) for j in range(n))
    grad2 = sum(ginv[i, j] * du[i] * du[j] for i in range(n) for j in range(n))
    dd = sp.Matrix(n, n, lambda i, j: du[i] * du[j])
    V = (lap + params.gamma * grad2) * gm - params.rho * hess + params.rho * dd + sp.Matrix(A)
    k = params.k
    f = _sigma_sym(ginv * V, k) ** sp.Rational(1, k)
    return f * sp.exp(-2 * params.varsigma * u) / params.c


def manufactured_problem(grid: Grid, metric, A, u, params: EquationParams, order: int = 2):
    """(ctx, u*) where u* solves the continuum equation with closed-form psi.

    ``metric`` and ``A`` are sympy matrices, ``u`` a sympy scalar in x1..xn.
    """
    g = MetricField.sample(grid, metric, order)
    A_field = SymTensorField.sample(grid, A)
    psi_expr = manufactured_psi_expr(metric, A, u, params)
    fn = sp.lambdify(symbols(grid.n), psi_expr, modules="numpy")
    with np.errstate(invalid="ignore"):
        vals = np.broadcast_to(np.asarray(fn(*grid.coordinates()), dtype=float), grid.shape)
    if not np.all(np.isfinite(vals) & (vals > 0)):
        raise ValueError(f"u* is not admissible for Gamma_{params.k} on this grid (psi not positive)")
    psi = ScalarField(grid, vals.copy(), psi_expr)
    return OperatorContext(g, A_field, params, psi), ScalarField.sample(grid, u)
