import math

import numpy as np
import pytest

from confbend.backgrounds import bump_A
from confbend.cones import ConeSpec, in_cone, validate_params
from confbend.curvature import MetricField
from confbend.grid import Grid, ScalarField, SymTensorField, grad_array
from confbend.operator import OperatorContext
from confbend.seed import (
    SeedConfig,
    SeedError,
    ball_mask,
    base_morse,
    build_morse,
    check_configuration,
    flow,
    key_vector,
    morse_critical_points,
    morse_pack,
    move_points,
    radial_targets,
    seed,
)

HALF = (math.pi / 2,) * 3


def ctx_with_A(grid, A_values, k=2):
    g = MetricField.flat(grid)
    params = validate_params(3, -1, 0.0, ConeSpec(3, k))
    return OperatorContext(g, SymTensorField(grid, A_values), params, ScalarField.constant(grid, 1.0))


def test_seed_config_validation():
    SeedConfig(HALF, 1.0, v_floor=-2.0)
    with pytest.raises(ValueError):
        SeedConfig(HALF, 1.0, v_floor=-0.5)
    with pytest.raises(ValueError):
        SeedConfig(HALF, 0.0)
    with pytest.raises(ValueError):
        SeedConfig(HALF, 1.0, N_schedule=(2.0, 1.0))
    with pytest.raises(ValueError):
        SeedConfig(HALF, 1.0, margin_mode="loose")
    with pytest.raises(ValueError):
        SeedConfig(HALF, 3.2).check_fits(Grid.cube(3, 8))
    with pytest.raises(ValueError):
        SeedConfig((1.0, 1.0), 1.0).check_fits(Grid.cube(3, 8))


@pytest.mark.parametrize("v_floor", [-1.0, -2.0])
def test_base_morse_floor_and_critical_points(v_floor):
    grid = Grid.cube(3, 16)
    w = base_morse(grid, v_floor=v_floor)
    assert w.values.max() == pytest.approx(v_floor)
    assert w.values.min() == pytest.approx(v_floor - 6.0)
    crit = morse_critical_points(grid)
    assert len(crit) == 8
    # every critical point sits on a grid node and the stencil gradient vanishes there
    dv = grad_array(w.values, grid)
    for c in crit:
        idx = grid.nearest_index(c)
        assert np.allclose(grid.point(idx), c)
        assert np.abs(dv[idx]).max() < 1e-12


def test_move_points_identity_cases():
    grid = Grid.cube(3, 8)
    w = base_morse(grid)
    assert np.array_equal(move_points(w, [], 1.0).values, w.values)
    # sources already inside the target ball produce no moves
    assert radial_targets(grid, [np.array(HALF)], np.array(HALF), 0.5) == []


def test_flow_moves_source_to_target_and_fixes_far_points():
    grid = Grid.cube(3, 8)
    a, b = np.array([1.0, 1.0, 1.0]), np.array([2.0, 1.5, 1.0])
    s = 0.6
    moved = flow(grid, a, [(a, b)], s)
    assert np.linalg.norm(moved - b) < 1e-8
    far = np.array([[4.5, 4.5, 4.5], [1.0, 4.0, 1.0]])
    assert np.array_equal(flow(grid, far, [(a, b)], s), far)
    pts = np.random.default_rng(0).uniform(0, 2 * math.pi, (20, 3))
    back = flow(grid, flow(grid, pts, [(a, b)], s), [(a, b)], s, inverse=True)
    assert np.abs(back - pts).max() < 1e-7


def test_check_configuration_rejects_points_in_tube():
    grid = Grid.cube(3, 8)
    a, b = np.array([1.0, 1.0, 1.0]), np.array([2.0, 1.0, 1.0])
    check_configuration(grid, [(a, b)], 0.3, fixed=[np.array([1.5, 2.0, 1.0])])
    with pytest.raises(SeedError):
        check_configuration(grid, [(a, b)], 0.3, fixed=[np.array([1.5, 1.1, 1.0])])


def test_build_morse_herds_critical_points():
    grid = Grid.cube(3, 16)
    cfg = SeedConfig(HALF, 3.1)
    pack = build_morse(grid, cfg, 1.75)
    assert pack.m0 > 0
    assert len(pack.critical_points) == 8
    for c in pack.critical_points:
        assert np.linalg.norm(grid.periodic_delta(np.array(c), np.array(HALF))) < cfg.r0 / 2
    assert pack.v.values.max() <= cfg.v_floor + 1e-12


def test_build_morse_rejects_bad_radius():
    with pytest.raises(SeedError):
        build_morse(Grid.cube(3, 8), SeedConfig(HALF, 3.0), 1.0, target_radius=2.0)


def test_strict_A_accepts_first_N():
    grid = Grid.cube(3, 16)
    ctx = ctx_with_A(grid, 2.0 * SymTensorField.identity(grid).values)
    cfg = SeedConfig(HALF, 3.1)
    pack = morse_pack(base_morse(grid), cfg)
    u, N, rep = seed(ctx, cfg, pack)
    assert N == cfg.N_schedule[0]
    assert rep["escalations"] == 1
    assert rep["margin_min"] >= cfg.delta
    assert np.all(u.values > 0)


def test_key_vector_membership_for_large_N():
    for k, tau in [(1, 0.0), (2, 0.0), (3, -1.0)]:
        params = validate_params(3, -1, tau, ConeSpec(3, k))
        for vf in (-1.0, -2.0):
            assert in_cone(key_vector(params, 64.0, vf), k)
        assert np.allclose(key_vector(params, 1e4, -1.0), [1, 1, 1 - params.rho])


def test_seed_failure_reports_worst_point():
    grid = Grid.cube(3, 8)
    ctx = ctx_with_A(grid, 2.0 * SymTensorField.identity(grid).values)
    cfg = SeedConfig(HALF, 3.1, N_schedule=(1.0, 2.0), delta=1e6)
    with pytest.raises(SeedError) as exc:
        seed(ctx, cfg, morse_pack(base_morse(grid), cfg))
    worst = exc.value.report["worst"]
    assert worst["N"] == 2.0
    assert len(worst["lambda"]) == 3
    assert len(exc.value.report["attempts"]) == 2


def test_seed_rejects_inadmissible_A_and_high_v():
    grid = Grid.cube(3, 8)
    cfg = SeedConfig(HALF, 3.1)
    bad = ctx_with_A(grid, -1.0 * SymTensorField.identity(grid).values)
    with pytest.raises(SeedError, match="weakly"):
        seed(bad, cfg, morse_pack(base_morse(grid), cfg))
    good = ctx_with_A(grid, SymTensorField.identity(grid).values)
    with pytest.raises(SeedError, match="v_floor"):
        seed(good, cfg, morse_pack(base_morse(grid, v_floor=0.0), cfg))


def test_bump_A_weak_with_strict_ball():
    grid = Grid.cube(3, 16)
    g = MetricField.flat(grid)
    A = bump_A(g, HALF, 3.1)
    ctx = ctx_with_A(grid, A.values)
    cfg = SeedConfig(HALF, 3.1, N_schedule=(1.0,), margin_mode="relative")
    with pytest.raises(SeedError) as exc:
        seed(ctx, cfg, morse_pack(base_morse(grid), cfg))
    rep = exc.value.report
    assert rep["weakly_admissible"] and rep["strict_at_p0"] and rep["strict_in_ball"]
    assert ball_mask(grid, HALF, 3.1).sum() > 0
