import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "artifact",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("artifact")

HALF_PI = math.pi / 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def manufactured_setup(size: int, k: int = 2):
    """Conformally flat metric, A = a g, and a closed-form solution u*; returns (ctx, u*, seed u, N)."""
    import sympy as sp

    from confbend.backgrounds import manufactured_problem
    from confbend.cones import ConeSpec, validate_params
    from confbend.grid import Grid, symbols
    from confbend.seed import SeedConfig, build_morse, seed

    x1, x2, x3 = symbols(3)
    G = sp.exp(sp.sin(x1 + x2) / 5) * sp.eye(3)
    a = 3 + sp.sin(x1) * sp.cos(x2) / 2 + sp.cos(x3) / 4
    ustar = 3 * sp.sin(x1) / 10 + sp.cos(x2 + x3) / 5 - sp.sin(x3) / 10
    params = validate_params(3, -1, 0.0, ConeSpec(3, k))
    grid = Grid.cube(3, size)
    ctx, us = manufactured_problem(grid, G, a * G, ustar, params)
    cfg = SeedConfig((HALF_PI,) * 3, 3.1)
    pack = build_morse(grid, cfg, 1.75)
    u0, N, _ = seed(ctx, cfg, pack)
    return ctx, us, u0, N, cfg, pack


@pytest.fixture(scope="session")
def manufactured16():
    return manufactured_setup(16)


@pytest.fixture(scope="session")
def solved16(manufactured16):
    from confbend.solver import continuity_solve

    ctx, us, u0, N, cfg, pack = manufactured16
    u, rep = continuity_solve(ctx, u0)
    return ctx, us, u, rep


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed again in the terminal summary."""

    def record(num: int, ok: bool, detail: str) -> bool:
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[num])
