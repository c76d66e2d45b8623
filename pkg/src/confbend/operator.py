"""The reduced conformal operator V[u] and the residual of f(lambda(g^-1 V[u])) = c psi e^{2 s u}.

Discrete conventions: V is assembled from the stencil gradient and the
stencil covariant Hessian of ``u`` (see ``curvature.covariant_derivatives``),
and ``Linearization`` is the exact derivative of that discrete map, so
central differences of ``residual`` reproduce it to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cones import ConeViolation, EquationParams
from .curvature import MetricField, covariant_derivatives, modified_schouten
from .grid import ScalarField, SymTensorField, grad_array, hessian_array, hessian_diagonal_weight

TIE_TOL = 1e-10


@dataclass(frozen=True)
class OperatorContext:
    g: MetricField
    A: SymTensorField
    params: EquationParams
    psi: ScalarField

    def __post_init__(self):
        if not (self.A.grid == self.g.grid == self.psi.grid):
            raise ValueError("metric, A and psi must share one grid")
        if self.params.n != self.g.n:
            raise ValueError("parameter dimension does not match the grid")
        if not np.all(self.psi.values > 0):
            raise ValueError("psi must be positive everywhere")

    @classmethod
    def from_metric(cls, g: MetricField, params: EquationParams, psi: ScalarField) -> "OperatorContext":
        """Use A = (n-2)/(alpha(tau-1)) * A^{tau,alpha}_g computed from g's curvature."""
        n = params.n
        scale = (n - 2) / (params.alpha * (params.tau - 1))
        A = modified_schouten(g, params.tau, params.alpha)
        return cls(g, SymTensorField(g.grid, scale * A.values), params, psi)

    @property
    def grid(self):
        return self.g.grid

    def with_psi(self, psi: ScalarField) -> "OperatorContext":
        return OperatorContext(self.g, self.A, self.params, psi)

    def rhs(self, u: np.ndarray) -> np.ndarray:
        vs = self.params.varsigma
        return self.params.c * self.psi.values * np.exp(2.0 * vs * u)


@dataclass(frozen=True)
class EigenField:
    """Generalized eigenvalues (ascending) and g-orthonormal eigenvectors (columns)."""

    lambdas: np.ndarray
    frames: np.ndarray


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def assemble_V_array(ctx: OperatorContext, u: np.ndarray):
    """Full V[u] plus the derivative pieces ``(V, du, hess)``."""
    p = ctx.params
    g = ctx.g
    du, hess = covariant_derivatives(g, u)
    lap = g.trace(hess)
    grad2 = g.inner(du, du)
    V = (
        (lap + p.gamma * grad2)[..., None, None] * g.g
        - p.rho * hess
        + p.rho * np.einsum("...i,...j->...ij", du, du)
        + ctx.A.full()
    )
    return V, du, hess


def assemble_V(ctx: OperatorContext, u: ScalarField) -> SymTensorField:
    return SymTensorField.from_full(ctx.grid, assemble_V_array(ctx, _values(u))[0])


def gen_eigen_array(V: np.ndarray, g: MetricField) -> EigenField:
    Li = g.chol_inv
    Vt = Li @ V @ np.swapaxes(Li, -1, -2)
    try:
        lam, Q = np.linalg.eigh(Vt)
    except np.linalg.LinAlgError as exc:
        bad = np.argwhere(~np.isfinite(Vt).all(axis=(-1, -2)))
        raise RuntimeError(f"eigen-solver failed; first bad point {bad[:1].tolist()}") from exc
    return EigenField(lam, np.swapaxes(Li, -1, -2) @ Q)


def gen_eigen(V: SymTensorField, g: MetricField) -> EigenField:
    """Eigenvalues of the pencil (V, g) via the Cholesky reduction L^-1 V L^-T."""
    return gen_eigen_array(V.full(), g)


def cone_guard(ctx: OperatorContext, lam: np.ndarray) -> np.ndarray:
    """Pointwise admissibility margin; raises ConeViolation outside the open cone."""
    marg = ctx.params.cone.margin(lam)
    bad = ~(marg > 0)
    if np.any(bad):
        idx = np.argwhere(bad)
        raise ConeViolation(
            f"{len(idx)} grid point(s) outside Gamma_{ctx.params.k}; worst margin {marg.min():.3e}",
            points=idx,
            margins=marg[bad],
        )
    return marg


@dataclass
class Evaluation:
    """Residual and everything needed to linearize at one iterate."""

    u: np.ndarray
    V: np.ndarray
    du: np.ndarray
    hess: np.ndarray
    eig: EigenField
    margin: np.ndarray
    fval: np.ndarray
    F: np.ndarray

    @property
    def res_norm(self) -> float:
        return float(np.max(np.abs(self.F)))


def evaluate(ctx: OperatorContext, u) -> Evaluation:
    u = _values(u)
    V, du, hess = assemble_V_array(ctx, u)
    eig = gen_eigen_array(V, ctx.g)
    marg = cone_guard(ctx, eig.lambdas)
    fval = ctx.params.cone.f_value(eig.lambdas)
    return Evaluation(u, V, du, hess, eig, marg, fval, fval - ctx.rhs(u))


def residual(ctx: OperatorContext, u) -> ScalarField:
    """F[u] = f(lambda(g^-1 V[u])) - c psi e^{2 s u}."""
    return ScalarField(ctx.grid, evaluate(ctx, u).F)


def _tie_averaged(lam: np.ndarray, fi: np.ndarray) -> np.ndarray:
    scale = np.maximum(1.0, np.abs(lam).max(axis=-1, keepdims=True))
    new_block = np.diff(lam, axis=-1) > TIE_TOL * scale
    labels = np.concatenate([np.zeros(lam.shape[:-1] + (1,), dtype=int), np.cumsum(new_block, axis=-1)], axis=-1)
    out = fi.copy()
    for lab in range(lam.shape[-1]):
        mask = labels == lab
        cnt = mask.sum(axis=-1, keepdims=True)
        mean = np.where(cnt > 0, (fi * mask).sum(axis=-1, keepdims=True) / np.maximum(cnt, 1), 0.0)
        out = np.where(mask, mean, out)
    return out


class Linearization:
    """DF[u] as a second-order operator  a^{ij} d_ij w + b^l d_l w + c0 w."""

    def __init__(self, ctx: OperatorContext, ev: Evaluation):
        p = ctx.params
        g = ctx.g
        self.ctx = ctx
        self.grid = ctx.grid
        self.order = g.order
        fi = _tie_averaged(ev.eig.lambdas, p.cone.f_grad(ev.eig.lambdas))
        X = ev.eig.frames
        B = np.einsum("...ai,...i,...bi->...ab", X, fi, X)
        T = fi.sum(axis=-1)
        self.fi = fi
        self.a = T[..., None, None] * g.inverse - p.rho * B
        Bu = np.einsum("...kl,...k->...l", B, ev.du)
        gu = np.einsum("...kl,...k->...l", g.inverse, ev.du)
        self.b = (
            2.0 * p.gamma * T[..., None] * gu
            + 2.0 * p.rho * Bu
            - np.einsum("...ij,...lij->...l", self.a, g.christoffel)
        )
        self.c0 = -2.0 * p.varsigma * ctx.rhs(ev.u)

    def apply(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float).reshape(self.grid.shape)
        hw = hessian_array(w, self.grid, self.order)
        gw = grad_array(w, self.grid, self.order)
        return (
            np.einsum("...ij,...ij->...", self.a, hw)
            + np.einsum("...l,...l->...", self.b, gw)
            + self.c0 * w
        )

    def diagonal(self) -> np.ndarray:
        wts = hessian_diagonal_weight(self.grid, self.order)
        return np.einsum("...ii,i->...", self.a, wts) + self.c0

    def symbol_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of a^{ij} relative to g^{ij}, per point, ascending."""
        L = self.ctx.g.chol
        return np.linalg.eigvalsh(np.swapaxes(L, -1, -2) @ self.a @ L)


def linearization(ctx: OperatorContext, u) -> Linearization:
    return Linearization(ctx, evaluate(ctx, u))


def linearize(ctx: OperatorContext, u, w) -> ScalarField:
    """Directional derivative DF[u] w."""
    return ScalarField(ctx.grid, linearization(ctx, u).apply(_values(w)))


def ellipticity_probe(ctx: OperatorContext, u) -> dict:
    sym = linearization(ctx, u).symbol_eigenvalues()
    lo, hi = float(sym[..., 0].min()), float(sym[..., -1].max())
    return {
        "symbol_min": lo,
        "symbol_max": hi,
        "ratio": hi / lo if lo > 0 else float("inf"),
        "uniformly_elliptic": lo > 0,
    }
