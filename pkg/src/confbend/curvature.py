"""Finite-difference Riemannian curvature on periodic grids.

Christoffel symbols come from stencil derivatives of the metric; the Ricci
tensor is contracted from the coordinate Riemann formula with stencil
derivatives of the Christoffel symbols.  The covariant Hessian lives here
too, so the operator code never touches Christoffel symbols directly.
"""

from __future__ import annotations

import numpy as np
import sympy as sp
from dataclasses import dataclass

from .grid import (
    Grid,
    ScalarField,
    SymTensorField,
    grad_array,
    hessian_array,
    symbols,
)

SPD_FLOOR = 1e-10


class SPDError(ValueError):
    """Metric is not positive definite at some grid point."""

    def __init__(self, index, pivot):
        super().__init__(f"metric not SPD at grid index {index} (pivot {pivot:.3e})")
        self.index = index
        self.pivot = pivot


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class MetricField:
    """SPD metric field with cached inverse, Cholesky factor and Christoffels.

    ``christoffel[..., k, i, j]`` is the second-kind symbol Gamma^k_ij.
    """

    def __init__(self, tensor: SymTensorField, order: int = 2):
        self.tensor = tensor
        self.grid = tensor.grid
        self.order = order
        g = tensor.full()
        n = self.grid.n
        flat = g.reshape(-1, n, n)
        try:
            chol = np.linalg.cholesky(flat)
            pivots = np.einsum("pii->pi", chol) ** 2
            bad = np.argmin(pivots.min(axis=1))
            if pivots[bad].min() <= SPD_FLOOR:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            mins = np.linalg.eigvalsh(flat)[:, 0]
            bad = int(np.argmin(mins))
            raise SPDError(np.unravel_index(bad, self.grid.shape), float(mins[bad])) from None
        self.g = _readonly(g)
        self.chol = _readonly(chol.reshape(g.shape))
        self.chol_inv = _readonly(np.linalg.inv(chol).reshape(g.shape))
        self.inverse = _readonly(np.linalg.inv(flat).reshape(g.shape))
        self.christoffel = _readonly(self._christoffel())

    @classmethod
    def sample(cls, grid: Grid, matrix, order: int = 2) -> "MetricField":
        return cls(SymTensorField.sample(grid, matrix), order)

    @classmethod
    def flat(cls, grid: Grid) -> "MetricField":
        return cls(SymTensorField.identity(grid))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def expr(self):
        return self.tensor.expr

    def refine(self, factor: int) -> "MetricField":
        return MetricField(self.tensor.refine(factor), self.order)

    def conformal(self, u: ScalarField) -> "MetricField":
        """The metric e^{2u} g, keeping a generator when both have one."""
        e2u = np.exp(2.0 * u.values)
        packed = self.tensor.values * e2u[..., None]
        expr = None
        if self.tensor.expr is not None and u.expr is not None:
            expr = self.tensor.expr * sp.exp(2 * u.expr)
        return MetricField(SymTensorField(self.grid, packed, expr), self.order)

    def _christoffel(self) -> np.ndarray:
        # dg[..., i, j, l] = d_l g_ij
        dg = grad_array(self.g, self.grid, self.order)
        # first kind, lower index l: 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
        first = 0.5 * (
            np.einsum("...jli->...lij", dg)
            + np.einsum("...ilj->...lij", dg)
            - np.einsum("...ijl->...lij", dg)
        )
        gam = np.einsum("...kl,...lij->...kij", self.inverse, first)
        return 0.5 * (gam + np.swapaxes(gam, -1, -2))

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """g^{ij} a_i b_j for covector arrays."""
        return np.einsum("...ij,...i,...j->...", self.inverse, a, b)

    def trace(self, t: np.ndarray) -> np.ndarray:
        """g^{ij} t_ij for full tensor arrays."""
        return np.einsum("...ij,...ij->...", self.inverse, t)


def christoffel(g: MetricField) -> np.ndarray:
    return g.christoffel


def covariant_derivatives(g: MetricField, u: np.ndarray, order: int | None = None):
    """Return ``(du, hess)`` where hess is the covariant Hessian of ``u``."""
    order = g.order if order is None else order
    du = grad_array(u, g.grid, order)
    hess = hessian_array(u, g.grid, order) - np.einsum("...kij,...k->...ij", g.christoffel, du)
    return du, hess


def covariant_hessian(g: MetricField, u: ScalarField) -> SymTensorField:
    return SymTensorField.from_full(g.grid, covariant_derivatives(g, u.values)[1])


def laplacian(g: MetricField, u: ScalarField) -> ScalarField:
    return ScalarField(g.grid, g.trace(covariant_derivatives(g, u.values)[1]))


def _ricci_full(g: MetricField) -> np.ndarray:
    gam = g.christoffel
    # dgam[..., k, i, j, a] = d_a Gamma^k_ij
    dgam = grad_array(gam, g.grid, g.order)
    term1 = np.einsum("...lijl->...ij", dgam)
    term2 = np.einsum("...lilj->...ij", dgam)
    trace_gam = np.einsum("...llm->...m", gam)
    term3 = np.einsum("...m,...mij->...ij", trace_gam, gam)
    term4 = np.einsum("...ljm,...mil->...ij", gam, gam)
    ric = term1 - term2 + term3 - term4
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


def ricci(g: MetricField) -> SymTensorField:
    return SymTensorField.from_full(g.grid, _ricci_full(g))


def scalar(g: MetricField) -> ScalarField:
    return ScalarField(g.grid, g.trace(_ricci_full(g)))


def _check_dimension(n: int):
    if n < 3:
        raise ValueError(f"modified Schouten tensor needs n >= 3, got {n}")


def schouten_from_ricci(ric: np.ndarray, R: np.ndarray, g: np.ndarray, tau: float, alpha: int) -> np.ndarray:
    n = g.shape[-1]
    _check_dimension(n)
    return (alpha / (n - 2)) * (ric - (tau / (2 * (n - 1))) * R[..., None, None] * g)


@dataclass(frozen=True)
class CurvaturePack:
    ricci: SymTensorField
    scalar: ScalarField
    schouten_mod: SymTensorField
    tau: float
    alpha: int


def curvature_pack(g: MetricField, tau: float = 1.0, alpha: int = 1) -> CurvaturePack:
    ric = _ricci_full(g)
    R = g.trace(ric)
    A = schouten_from_ricci(ric, R, g.g, tau, alpha)
    grid = g.grid
    return CurvaturePack(
        SymTensorField.from_full(grid, ric),
        ScalarField(grid, R),
        SymTensorField.from_full(grid, A),
        tau,
        alpha,
    )


def modified_schouten(g: MetricField, tau: float, alpha: int) -> SymTensorField:
    """(alpha/(n-2)) (Ric - tau/(2(n-1)) R g)."""
    _check_dimension(g.n)
    return curvature_pack(g, tau, alpha).schouten_mod


def conformal_terms(g: MetricField, u: np.ndarray, tau: float, alpha: int) -> np.ndarray:
    """Change of the modified Schouten tensor under g -> e^{2u} g (full array)."""
    n = g.n
    _check_dimension(n)
    du, hess = covariant_derivatives(g, u)
    lap = g.trace(hess)
    grad2 = g.inner(du, du)
    gg = g.g
    return (
        (alpha * (tau - 1) / (n - 2)) * lap[..., None, None] * gg
        - alpha * hess
        + (alpha * (tau - 2) / 2) * grad2[..., None, None] * gg
        + alpha * np.einsum("...i,...j->...ij", du, du)
    )


def conformal_schouten(
    g: MetricField, u: ScalarField, tau: float, alpha: int, base: SymTensorField | None = None
) -> SymTensorField:
    """Modified Schouten tensor of e^{2u} g via the conformal transformation law.

    ``base`` may supply a precomputed A^{tau,alpha}_g.
    """
    if base is None:
        base = modified_schouten(g, tau, alpha)
    full = base.full() + conformal_terms(g, u.values, tau, alpha)
    return SymTensorField.from_full(g.grid, full)


def ricci_eigenvalues(g: MetricField, ric: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues of g^{-1} Ric per point, ascending."""
    if ric is None:
        ric = _ricci_full(g)
    L = g.chol_inv
    return np.linalg.eigvalsh(L @ ric @ np.swapaxes(L, -1, -2))


def curvature_report(g: MetricField) -> dict:
    ric = _ricci_full(g)
    lam = ricci_eigenvalues(g, ric)
    R = g.trace(ric)
    return {
        "grid": g.grid.to_json(),
        "ricci_min_eigenvalue": {"min": float(lam[..., 0].min()), "max": float(lam[..., 0].max())},
        "ricci_max_eigenvalue": {"min": float(lam[..., -1].min()), "max": float(lam[..., -1].max())},
        "scalar_curvature": {"min": float(R.min()), "max": float(R.max())},
        "ricci_negative_definite_everywhere": bool(lam[..., -1].max() < 0),
    }


# --------------------------------------------------------------------------
# exact (symbolic) curvature, used as an oracle and for manufactured data


def symbolic_christoffel(matrix, n: int):
    xs = symbols(n)
    g = sp.Matrix(matrix)
    ginv = g.inv()
    gam = [[[sp.S(0)] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                s = sum(
                    ginv[k, l] * (sp.diff(g[j, l], xs[i]) + sp.diff(g[i, l], xs[j]) - sp.diff(g[i, j], xs[l]))
                    for l in range(n)
                ) / 2
                gam[k][i][j] = gam[k][j][i] = s
    return gam


def symbolic_ricci(matrix, n: int) -> sp.Matrix:
    xs = symbols(n)
    gam = symbolic_christoffel(matrix, n)
    ric = sp.zeros(n, n)
    for i in range(n):
        for j in range(i, n):
            r = 0
            for l in range(n):
                r += sp.diff(gam[l][i][j], xs[l]) - sp.diff(gam[l][i][l], xs[j])
                for m in range(n):
                    r += gam[l][l][m] * gam[m][i][j] - gam[l][j][m] * gam[m][i][l]
            ric[i, j] = ric[j, i] = r
    return ric
