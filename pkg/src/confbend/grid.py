"""Periodic structured grids, field containers and finite-difference stencils.

Fields store their values with the grid axes leading and components
trailing, i.e. ``values.shape == grid.shape + (ncomp,)`` (scalar fields have
no trailing axis).  Symmetric 2-tensors are kept in packed upper-triangle
form; ``SymTensorField.full()`` expands to ``(..., n, n)``.

A field may carry a closed-form generator (a sympy expression in the
coordinate symbols ``x1 .. xn``).  Refinement of such a field is exact
resampling of the generator on the finer grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import sympy as sp

TWO_PI = 2.0 * math.pi


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    sizes: tuple[int, ...]
    periods: tuple[float, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        periods = tuple(float(p) for p in self.periods) or (TWO_PI,) * len(sizes)
        if len(sizes) < 3:
            raise GridError(f"grid dimension must be >= 3, got {len(sizes)}")
        if len(periods) != len(sizes):
            raise GridError("periods and sizes differ in length")
        if any(s < 8 for s in sizes):
            raise GridError(f"every axis needs at least 8 points, got {sizes}")
        if any(not (p > 0 and math.isfinite(p)) for p in periods):
            raise GridError(f"periods must be positive, got {periods}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "periods", periods)

    @classmethod
    def cube(cls, n: int, size: int, period: float = TWO_PI) -> "Grid":
        return cls((size,) * n, (period,) * n)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def npoints(self) -> int:
        return math.prod(self.sizes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(p / s for p, s in zip(self.periods, self.sizes))

    @property
    def h(self) -> float:
        """Largest spacing; the mesh size used in convergence statements."""
        return max(self.spacings)

    def axes(self) -> list[np.ndarray]:
        return [np.arange(s) * d for s, d in zip(self.sizes, self.spacings)]

    def coordinates(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def point(self, index: Sequence[int]) -> np.ndarray:
        """Coordinates of a grid point; indices wrap periodically."""
        return np.array([(i % s) * d for i, s, d in zip(index, self.sizes, self.spacings)])

    def nearest_index(self, x: Sequence[float]) -> tuple[int, ...]:
        return tuple(int(round(xi / d)) % s for xi, d, s in zip(x, self.spacings, self.sizes))

    def refine(self, factor: int) -> "Grid":
        if int(factor) < 2:
            raise GridError("refinement factor must be >= 2")
        return Grid(tuple(s * int(factor) for s in self.sizes), self.periods)

    def periodic_delta(self, x: np.ndarray, y: Sequence[float]) -> np.ndarray:
        """Minimum-image displacement ``x - y``; ``x`` has coordinates on its last axis."""
        L = np.asarray(self.periods)
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return d - L * np.round(d / L)

    def to_json(self) -> dict:
        return {"sizes": list(self.sizes), "periods": list(self.periods)}


def symbols(n: int) -> tuple[sp.Symbol, ...]:
    """Coordinate symbols ``x1 .. xn`` used by closed-form generators."""
    return sp.symbols(" ".join(f"x{i + 1}" for i in range(n)), real=True)


def _evaluate(expr, grid: Grid) -> np.ndarray:
    xs = symbols(grid.n)
    fn = sp.lambdify(xs, sp.sympify(expr), modules="numpy")
    out = np.asarray(fn(*grid.coordinates()), dtype=float)
    return np.broadcast_to(out, grid.shape).copy()


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def sym_pairs(n: int) -> list[tuple[int, int]]:
    """Packed upper-triangle ordering (0,0), (0,1), ..., (n-1,n-1)."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def pack_sym(full: np.ndarray) -> np.ndarray:
    n = full.shape[-1]
    return np.stack([full[..., i, j] for i, j in sym_pairs(n)], axis=-1)


def unpack_sym(packed: np.ndarray, n: int) -> np.ndarray:
    full = np.empty(packed.shape[:-1] + (n, n))
    for c, (i, j) in enumerate(sym_pairs(n)):
        full[..., i, j] = packed[..., c]
        full[..., j, i] = packed[..., c]
    return full


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    expr: object = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridError(f"scalar field shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("scalar field has non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def sample(cls, grid: Grid, expr) -> "ScalarField":
        expr = sp.sympify(expr)
        return cls(grid, _evaluate(expr, grid), expr)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls.sample(grid, sp.Float(c))

    def refine(self, factor: int) -> "ScalarField":
        if self.expr is None:
            raise GridError("cannot refine a field without a closed-form generator")
        return ScalarField.sample(self.grid.refine(factor), self.expr)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            expr = None if self.expr is None or other.expr is None else self.expr + other.expr
            return ScalarField(self.grid, self.values + other.values, expr)
        expr = None if self.expr is None else self.expr + other
        return ScalarField(self.grid, self.values + other, expr)

    def __mul__(self, c: float):
        expr = None if self.expr is None else self.expr * c
        return ScalarField(self.grid, self.values * c, expr)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class CovectorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (self.grid.n,):
            raise GridError(f"covector field shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise GridError("covector field has non-finite values")
        object.__setattr__(self, "values", _freeze(v))


@dataclass(frozen=True, eq=False)
class SymTensorField:
    grid: Grid
    values: np.ndarray
    expr: object = field(default=None, repr=False)

    def __post_init__(self):
        n = self.grid.n
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (n * (n + 1) // 2,):
            raise GridError(f"sym tensor field shape {v.shape} does not match grid")
        if not np.all(np.isfinite(v)):
            raise GridError("sym tensor field has non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def from_full(cls, grid: Grid, full: np.ndarray) -> "SymTensorField":
        """Pack a full tensor; the upper triangle is taken after symmetrizing."""
        full = np.asarray(full, dtype=float)
        return cls(grid, pack_sym(0.5 * (full + np.swapaxes(full, -1, -2))))

    @classmethod
    def sample(cls, grid: Grid, matrix) -> "SymTensorField":
        """Sample a symmetric sympy matrix (or nested list) of expressions."""
        m = sp.Matrix(matrix)
        n = grid.n
        if m.shape != (n, n) or m != m.T:
            raise GridError("generator must be a symmetric n x n matrix")
        packed = np.stack([_evaluate(m[i, j], grid) for i, j in sym_pairs(n)], axis=-1)
        return cls(grid, packed, m)

    @classmethod
    def identity(cls, grid: Grid, scale: float = 1.0) -> "SymTensorField":
        return cls.sample(grid, sp.eye(grid.n) * scale)

    @cached_property
    def _full(self) -> np.ndarray:
        return _freeze(unpack_sym(self.values, self.grid.n))

    def full(self) -> np.ndarray:
        return self._full

    def component(self, i: int, j: int) -> np.ndarray:
        return self._full[..., i, j]

    def refine(self, factor: int) -> "SymTensorField":
        if self.expr is None:
            raise GridError("cannot refine a field without a closed-form generator")
        return SymTensorField.sample(self.grid.refine(factor), self.expr)


# --------------------------------------------------------------------------
# stencils

_D1 = {2: ((1, 0.5),), 4: ((1, 2.0 / 3.0), (2, -1.0 / 12.0))}
_D2 = {2: (-2.0, ((1, 1.0),)), 4: (-2.5, ((1, 4.0 / 3.0), (2, -1.0 / 12.0)))}


def _check_order(order: int):
    if order not in (2, 4):
        raise ValueError(f"stencil order must be 2 or 4, got {order}")


def d1(a: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """Central first derivative along ``axis`` with periodic wraparound."""
    _check_order(order)
    out = np.zeros_like(a)
    for shift, w in _D1[order]:
        out += w * (np.roll(a, -shift, axis) - np.roll(a, shift, axis))
    return out / h


def d2(a: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """Compact central second derivative along ``axis``; exactly zero on constants."""
    _check_order(order)
    out = np.zeros_like(a)
    for shift, w in _D2[order][1]:
        out += w * ((np.roll(a, -shift, axis) - a) + (np.roll(a, shift, axis) - a))
    return out / (h * h)


def grad_array(a: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """Gradient of grid-shaped arrays; extra trailing axes are carried along.

    ``a.shape == grid.shape + rest`` gives ``grid.shape + rest + (n,)``.
    """
    return np.stack([d1(a, i, h, order) for i, h in enumerate(grid.spacings)], axis=-1)


def hessian_array(a: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """Full coordinate Hessian ``(..., n, n)`` of a grid-shaped scalar array.

    Diagonal entries use the compact three-point (five-point) stencil; mixed
    entries are nested central differences.  The result is symmetric exactly.
    """
    n = grid.n
    hs = grid.spacings
    out = np.empty(a.shape + (n, n))
    firsts = [d1(a, i, hs[i], order) for i in range(n)]
    for i in range(n):
        out[..., i, i] = d2(a, i, hs[i], order)
        for j in range(i + 1, n):
            m = d1(firsts[i], j, hs[j], order)
            out[..., i, j] = m
            out[..., j, i] = m
    return out


def hessian_diagonal_weight(grid: Grid, order: int = 2) -> np.ndarray:
    """Center weights of the diagonal second-derivative stencils, per axis."""
    return np.array([_D2[order][0] / (h * h) for h in grid.spacings])


def gradient(f: ScalarField, order: int = 2) -> CovectorField:
    return CovectorField(f.grid, grad_array(f.values, f.grid, order))


def hessian_flat(f: ScalarField, order: int = 2) -> SymTensorField:
    return SymTensorField.from_full(f.grid, hessian_array(f.values, f.grid, order))


def refine(f: ScalarField, factor: int) -> ScalarField:
    return f.refine(factor)


def max_norm(a: np.ndarray) -> float:
    return float(np.max(np.abs(a)))


def observed_order(err_coarse: float, err_fine: float, factor: int = 2) -> float:
    return math.log(err_coarse / err_fine) / math.log(factor)
