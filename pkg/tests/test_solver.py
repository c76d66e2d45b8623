import math

import numpy as np
import pytest
import sympy as sp

from confbend.cones import ConeSpec, validate_params
from confbend.curvature import MetricField
from confbend.grid import Grid, ScalarField, SymTensorField, symbols
from confbend.operator import OperatorContext, evaluate
from confbend.seed import seed
from confbend.solver import (
    SolveError,
    SolverConfig,
    continuity_solve,
    covariance_check,
    initial_psi,
    newton,
    uniqueness_check,
)

x1, x2, x3 = symbols(3)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(guard_margin=1e-2, seed_delta=1e-3)
    assert SolverConfig().to_json()["krylov_restart"] == 60


def test_continuity_solve_reaches_tolerance(solved16):
    ctx, us, u, rep = solved16
    assert rep.converged
    assert rep.final_residual <= SolverConfig().newton_tol
    assert rep.homotopy[-1]["t"] == 1.0
    assert rep.guard_respected(SolverConfig().guard_margin)
    assert rep.elliptic_throughout()
    assert np.abs(u.values - us.values).max() < 5e-2
    js = rep.to_json()
    assert js["converged"] and len(js["iterates"]) == len(rep.iterates)


def test_newton_from_discrete_solution_needs_no_steps(solved16):
    ctx, us, u, _ = solved16
    sol, rep = newton(ctx, u)
    assert len(rep.iterates) <= 2
    assert np.array_equal(sol.values, u.values) or np.abs(sol.values - u.values).max() < 1e-9


def test_newton_from_exact_u_star_converges_quadratically(manufactured16):
    ctx, us, *_ = manufactured16
    _, rep = newton(ctx, us)
    res = [it["residual"] for it in rep.iterates]
    assert res[-1] <= 1e-9
    assert all(b < a for a, b in zip(res, res[1:]))
    # tail: each residual at most a modest multiple of the previous one squared
    tail = [(a, b) for a, b in zip(res, res[1:]) if a < 1e-2]
    assert tail and all(b <= 50 * a**2 + 1e-12 for a, b in tail)


def test_target_equal_to_start_is_immediate(manufactured16):
    ctx, us, u0, *_ = manufactured16
    ctx0 = ctx.with_psi(initial_psi(ctx, u0))
    u, rep = continuity_solve(ctx0, u0)
    assert all(h["newton_iters"] == 0 for h in rep.homotopy if h["accepted"])
    assert np.array_equal(u.values, u0.values)


def test_sigma1_residual_history_monotone():
    grid = Grid.cube(3, 12)
    g = MetricField.sample(grid, sp.exp(sp.sin(x1) / 5) * sp.eye(3))
    params = validate_params(3, -1, 0.0, ConeSpec(3, 1))
    A = SymTensorField(grid, 2.0 * g.tensor.values)
    psi = ScalarField.sample(grid, 1 + sp.cos(x2) * sp.sin(x3) / 4)
    ctx = OperatorContext(g, A, params, psi)
    u, rep = continuity_solve(ctx, ScalarField.constant(grid, 0.0))
    assert rep.converged
    for h in rep.homotopy:
        assert h["accepted"]
    res = [it["residual"] for it in rep.iterates]
    # inside each homotopy step the Newton residuals strictly decrease
    groups, cur = [], []
    for it in rep.iterates:
        if it["newton_iter"] == 0 and cur:
            groups.append(cur)
            cur = []
        cur.append(it["residual"])
    groups.append(cur)
    for gr in groups:
        assert all(b <= 0.9 * a for a, b in zip(gr, gr[1:]))
    assert res[-1] <= 1e-9


def test_start_outside_cone_is_reported(manufactured16):
    ctx, *_ = manufactured16
    bad = ScalarField.sample(ctx.grid, 3 * sp.sin(2 * x1))
    with pytest.raises(SolveError):
        newton(ctx, bad)


def test_uniqueness_across_seeds(manufactured16, solved16):
    ctx, us, u0, N, cfg, pack = manufactured16
    _, _, u_ref, _ = solved16
    with np.errstate(under="ignore"):
        other = ScalarField(ctx.grid, np.exp(2 * N * pack.v.values))
    rng = np.random.default_rng(3)
    wiggle = ScalarField(ctx.grid, u_ref.values + 1e-3 * rng.standard_normal(ctx.grid.shape))
    rep = uniqueness_check(ctx, [u0, other, wiggle])
    assert rep["unique"], rep["pairwise_max_diff"]


def test_identical_seeds_give_bit_identical_output(manufactured16, solved16):
    ctx, us, u0, *_ = manufactured16
    _, _, u_ref, _ = solved16
    u, _ = continuity_solve(ctx, u0)
    assert np.array_equal(u.values, u_ref.values)


@pytest.mark.parametrize("s", [1.0, 4.0])
def test_covariance_shift(solved16, s):
    ctx, us, u, _ = solved16
    rep = covariance_check(ctx, u, s)
    assert rep["ok"]


def test_covariance_resolve(solved16):
    ctx, us, u, _ = solved16
    s = 4.0
    ctx_s = ctx.with_psi(ScalarField(ctx.grid, s * ctx.psi.values))
    u_s, rep = newton(ctx_s, u)
    assert np.abs(u_s.values - (u.values - math.log(s) / 2)).max() < 1e-8
    with pytest.raises(ValueError):
        covariance_check(ctx, u, -1.0)
