"""Admissible starting metrics u = exp(N v) from a Morse function with its critical points herded into a ball.

Pipeline: ``base_morse`` builds the cosine Morse function on the torus,
``move_points`` pushes its critical points into ``B(p0, r0/2)`` along
straight bump-flow translations (time-1 flows of compactly supported
fields), and ``seed`` escalates N until every eigenvalue vector of
g^-1 V[exp(N v)] clears the cone margin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .grid import Grid, ScalarField, grad_array, symbols
from .cones import normalized_margin
from .operator import OperatorContext, assemble_V_array, gen_eigen_array


class SeedError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


MARGIN_MODES = ("absolute", "relative")


@dataclass
class SeedConfig:
    """Seeding parameters.

    ``margin_mode`` selects how the acceptance margin ``delta`` is measured:
    "absolute" uses min_j sigma_j(lam)/binom(n, j) directly, "relative"
    applies it to lam / max|lam| at each point (scale free).
    """

    p0: tuple[float, ...]
    r0: float
    N_schedule: tuple[float, ...] = tuple(float(2**i) for i in range(11))
    delta: float = 1e-3
    v_floor: float = -1.0
    margin_mode: str = "absolute"

    def __post_init__(self):
        self.p0 = tuple(float(x) for x in self.p0)
        self.N_schedule = tuple(float(x) for x in self.N_schedule)
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if not self.N_schedule or self.N_schedule[0] <= 0:
            raise ValueError("N_schedule must be non-empty and positive")
        if any(b <= a for a, b in zip(self.N_schedule, self.N_schedule[1:])):
            raise ValueError("N_schedule must be strictly increasing")
        if self.v_floor > -1:
            raise ValueError("v_floor must be <= -1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.margin_mode not in MARGIN_MODES:
            raise ValueError(f"margin_mode must be one of {MARGIN_MODES}")

    def check_fits(self, grid: Grid):
        if len(self.p0) != grid.n:
            raise ValueError("p0 dimension does not match the grid")
        if self.r0 >= 0.5 * min(grid.periods):
            raise ValueError(f"ball radius {self.r0} does not fit the torus fundamental domain")

    def to_json(self) -> dict:
        return {
            "p0": list(self.p0),
            "r0": self.r0,
            "N_schedule": list(self.N_schedule),
            "delta": self.delta,
            "v_floor": self.v_floor,
            "margin_mode": self.margin_mode,
        }


@dataclass
class MorsePack:
    v: ScalarField
    m0: float
    critical_points: list = field(default_factory=list)


# --------------------------------------------------------------------------
# Morse function


def base_morse(grid: Grid, amplitude: float = 1.0, v_floor: float = -1.0) -> ScalarField:
    """amplitude * sum_i cos(2 pi x_i / L_i), shifted so that max = v_floor."""
    xs = symbols(grid.n)
    expr = amplitude * sum(sp.cos(2 * sp.pi * x / L) for x, L in zip(xs, grid.periods))
    expr = expr - amplitude * grid.n + v_floor
    return ScalarField.sample(grid, expr)


def morse_critical_points(grid: Grid) -> list[np.ndarray]:
    """The 2^n critical points of the cosine Morse function: {0, L/2}^n."""
    return [
        np.array([c * L / 2 for c, L in zip(corner, grid.periods)])
        for corner in itertools.product((0, 1), repeat=grid.n)
    ]


def radial_targets(grid: Grid, sources, p0, radius: float):
    """Destinations at distance ``radius`` from p0 along the (minimum-image) rays to the sources."""
    pairs = []
    for s in sources:
        d = grid.periodic_delta(s, p0)
        nd = np.linalg.norm(d)
        if nd <= radius:
            continue
        q = np.asarray(p0) + radius * d / nd
        pairs.append((np.asarray(p0) + d, q))
    return pairs


# --------------------------------------------------------------------------
# bump flows


def bump(r: np.ndarray, s: float) -> np.ndarray:
    """Smooth bump equal to 1 at r = 0 and vanishing for r >= s."""
    rho2 = np.minimum((r / s) ** 2, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.exp(1.0 - 1.0 / (1.0 - rho2))
    return np.where(rho2 < 1.0, out, 0.0)


def segment_distance(grid: Grid, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-image distance from points x (..., n) to the segment [a, b]."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    y = grid.periodic_delta(x, a)
    t = np.clip(y @ d / (d @ d), 0.0, 1.0)
    return np.linalg.norm(y - t[..., None] * d, axis=-1)


def _segment_gap(grid, a1, b1, a2, b2, samples=257):
    t = np.linspace(0.0, 1.0, samples)[:, None]
    pts2 = a2 + t * (b2 - a2)
    pts1 = a1 + t * (b1 - a1)
    return min(segment_distance(grid, pts2, a1, b1).min(), segment_distance(grid, pts1, a2, b2).min())


def check_configuration(grid: Grid, pairs, support_radius: float, fixed=()):
    """Reject pair lists whose tubes would disturb other sources, targets or fixed points."""
    s = support_radius
    for i, (a, b) in enumerate(pairs):
        disp = grid.periodic_delta(b, a)
        if np.any(np.abs(disp) >= 0.5 * np.asarray(grid.periods) - s):
            raise SeedError(f"pair {i}: displacement too long for an unambiguous periodic segment")
        others = [p for j, pr in enumerate(pairs) if j != i for p in pr] + list(fixed)
        for p in others:
            if segment_distance(grid, np.asarray(p, dtype=float), a, b) <= s:
                raise SeedError(f"pair {i}: tube contains point {np.round(p, 4).tolist()}")
        for j in range(i + 1, len(pairs)):
            a2, b2 = pairs[j]
            if _segment_gap(grid, a, a + disp, a2, a2 + grid.periodic_delta(b2, a2)) <= s:
                raise SeedError(f"segments {i} and {j} collide at support radius {s}")


def _field(grid, x, a, d, s):
    r = segment_distance(grid, x, a, a + d)
    return bump(r, s)[..., None] * d


def flow(grid: Grid, x: np.ndarray, pairs, support_radius: float, steps: int = 64, inverse: bool = False) -> np.ndarray:
    """Apply h (or h^-1) to points x, where h composes one time-1 translation flow per pair."""
    x = np.array(x, dtype=float)
    seq = list(enumerate(pairs))
    if inverse:
        seq = seq[::-1]
    dt = (-1.0 if inverse else 1.0) / steps
    for _, (a, b) in seq:
        a = np.asarray(a, dtype=float)
        d = grid.periodic_delta(b, a)
        for _ in range(steps):
            k1 = _field(grid, x, a, d, support_radius)
            k2 = _field(grid, x + 0.5 * dt * k1, a, d, support_radius)
            k3 = _field(grid, x + 0.5 * dt * k2, a, d, support_radius)
            k4 = _field(grid, x + dt * k3, a, d, support_radius)
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def move_points(w: ScalarField, pairs, support_radius: float, steps: int = 64, fixed=()) -> ScalarField:
    """v = w o h^-1, with h(source_i) = target_i for each (source, target) pair."""
    grid = w.grid
    if not pairs:
        return ScalarField(grid, w.values.copy(), w.expr)
    if w.expr is None:
        raise SeedError("move_points needs a closed-form generator for w")
    pairs = [(np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for a, b in pairs]
    check_configuration(grid, pairs, support_radius, fixed)
    pts = np.stack(grid.coordinates(), axis=-1)
    pre = flow(grid, pts, pairs, support_radius, steps, inverse=True)
    fn = sp.lambdify(symbols(grid.n), w.expr, modules="numpy")
    vals = np.broadcast_to(np.asarray(fn(*np.moveaxis(pre, -1, 0)), dtype=float), grid.shape)
    return ScalarField(grid, vals.copy())


def ball_mask(grid: Grid, p0, radius: float) -> np.ndarray:
    pts = np.stack(grid.coordinates(), axis=-1)
    return np.linalg.norm(grid.periodic_delta(pts, p0), axis=-1) <= radius


def morse_pack(v: ScalarField, cfg: SeedConfig, targets=(), order: int = 2) -> MorsePack:
    """Attach m0 = min |grad v|^2 (flat, stencil) outside the closed ball B(p0, r0)."""
    grid = v.grid
    dv = grad_array(v.values, grid, order)
    g2 = np.sum(dv * dv, axis=-1)
    outside = ~ball_mask(grid, cfg.p0, cfg.r0)
    m0 = float(g2[outside].min()) if outside.any() else float("inf")
    return MorsePack(v, m0, [np.asarray(t).tolist() for t in targets])


def build_morse(
    grid: Grid,
    cfg: SeedConfig,
    support_radius: float,
    target_radius: float | None = None,
    amplitude: float = 1.0,
    steps: int = 64,
    m0_floor: float = 1e-8,
) -> MorsePack:
    """base_morse, then radial moves of every critical point into B(p0, r0/2), then the m0 scan."""
    cfg.check_fits(grid)
    p0 = np.asarray(cfg.p0)
    radius = 0.495 * cfg.r0 if target_radius is None else float(target_radius)
    if not 0 < radius < 0.5 * cfg.r0:
        raise SeedError(f"target radius {radius} must lie in (0, r0/2)")
    w = base_morse(grid, amplitude, cfg.v_floor)
    crit = morse_critical_points(grid)
    pairs = radial_targets(grid, crit, p0, radius)
    fixed = [c for c in crit if np.linalg.norm(grid.periodic_delta(c, p0)) <= radius]
    v = move_points(w, pairs, support_radius, steps, fixed)
    pack = morse_pack(v, cfg, [b for _, b in pairs] + fixed)
    if not pack.m0 > m0_floor:
        dv = grad_array(v.values, grid)
        g2 = np.where(ball_mask(grid, cfg.p0, cfg.r0), np.inf, np.sum(dv * dv, axis=-1))
        idx = np.unravel_index(int(np.argmin(g2)), grid.shape)
        raise SeedError(
            "critical point left outside the ball",
            {"m0": pack.m0, "witness_index": [int(i) for i in idx], "witness_point": grid.point(idx).tolist()},
        )
    return pack


# --------------------------------------------------------------------------
# seeding


def _margins(cone, lam, mode):
    return cone.margin(lam) if mode == "absolute" else normalized_margin(lam, cone.k)


def key_vector(params, N: float, v_floor: float) -> np.ndarray:
    """(1,...,1,1-rho) + e^{N v_floor} (gamma,...,gamma,gamma+rho)."""
    n = params.n
    base = np.ones(n)
    base[-1] = 1.0 - params.rho
    tail = np.full(n, params.gamma)
    tail[-1] += params.rho
    return base + math.exp(N * v_floor) * tail


def seed(ctx: OperatorContext, cfg: SeedConfig, morse: MorsePack):
    """Escalate N until lambda(g^-1 V[exp(N v)]) clears the cone margin everywhere.

    Returns ``(u, N, report)``; raises SeedError when the schedule is exhausted.
    """
    grid = ctx.grid
    cfg.check_fits(grid)
    cone = ctx.params.cone
    v = morse.v.values
    if v.max() > cfg.v_floor + 1e-12:
        raise SeedError(f"v exceeds v_floor={cfg.v_floor}: max {v.max():.4g}")
    if not morse.m0 > 0:
        raise SeedError("Case-2 bound m0 is not positive", {"m0": morse.m0})
    lamA = gen_eigen_array(ctx.A.full(), ctx.g).lambdas
    weak_margin = normalized_margin(lamA, cone.k)
    inside = ball_mask(grid, cfg.p0, cfg.r0)
    i0 = grid.nearest_index(cfg.p0)
    report = {
        "config": cfg.to_json(),
        "weakly_admissible": bool(weak_margin.min() >= -1e-10),
        "strict_in_ball": bool(np.all(cone.margin(lamA[inside]) > 0)),
        "strict_at_p0": bool(cone.margin(lamA[i0]) > 0),
        "A_margin_in_ball_min": float(cone.margin(lamA[inside]).min()),
        "m0": morse.m0,
        "attempts": [],
    }
    if not report["weakly_admissible"]:
        raise SeedError("A is not weakly admissible", report)
    if not report["strict_at_p0"]:
        raise SeedError("A is not strictly admissible at p0", report)
    worst = None
    for N in cfg.N_schedule:
        with np.errstate(under="ignore"):
            u = np.exp(N * v)
        lam = gen_eigen_array(assemble_V_array(ctx, u)[0], ctx.g).lambdas
        marg = _margins(cone, lam, cfg.margin_mode)
        absm = cone.margin(lam)
        attempt = {
            "N": N,
            "margin_min": float(marg.min()),
            "absolute_margin_min": float(absm.min()),
            "case1_margin_min": float(marg[inside].min()),
            "case2_margin_min": float(marg[~inside].min()) if (~inside).any() else None,
            "key_vector_in_cone": bool(cone.contains(key_vector(ctx.params, N, cfg.v_floor))),
        }
        report["attempts"].append(attempt)
        if marg.min() >= cfg.delta:
            report.update(
                N=N,
                escalations=len(report["attempts"]),
                margin_min=attempt["margin_min"],
                key_vector=key_vector(ctx.params, N, cfg.v_floor).tolist(),
                key_vector_in_cone=attempt["key_vector_in_cone"],
            )
            return ScalarField(grid, u), N, report
        idx = np.unravel_index(int(np.argmin(marg)), grid.shape)
        worst = {
            "N": N,
            "index": [int(i) for i in idx],
            "inside_ball": bool(inside[idx]),
            "lambda": lam[idx].tolist(),
            "margin": float(marg[idx]),
        }
    report["worst"] = worst
    raise SeedError("N schedule exhausted; raise N or refine the grid", report)
