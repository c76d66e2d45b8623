import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confbend.cones import (
    ConeSpec,
    ConeViolation,
    GateError,
    check_addistruc,
    check_theorem21,
    elementary,
    f_grad,
    f_value,
    gate_report,
    in_cone,
    kappa_gamma,
    margin,
    normalized_margin,
    sample_cone,
    sigma_k,
    sigma_k_removed,
    tau_threshold,
    theta_ratio,
    validate_params,
)


def sigma_brute(lam, k):
    return sum(math.prod(c) for c in itertools.combinations(lam, k))


vec3 = arrays(float, 3, elements=st.floats(-5, 5, allow_nan=False))
vec4 = arrays(float, 4, elements=st.floats(-5, 5, allow_nan=False))


@given(st.one_of(vec3, vec4))
def test_elementary_matches_brute_force(lam):
    n = len(lam)
    e = elementary(lam, n)
    assert e[0] == 1.0
    for k in range(1, n + 1):
        assert e[k] == pytest.approx(sigma_brute(lam, k), abs=1e-9 * (1 + np.abs(lam).max() ** k))


def test_sigma_examples():
    lam = np.array([1.0, 2.0, 3.0])
    assert sigma_k(lam, 1) == 6
    assert sigma_k(lam, 2) == 11
    assert sigma_k(lam, 3) == 6
    assert np.allclose(sigma_k_removed(lam, 1), [5, 4, 3])


@pytest.mark.parametrize(
    "lam,k,inside",
    [
        ([1, 1, 1], 3, True),
        ([1, 1, 0], 3, False),
        ([1, 1, -0.4], 2, True),
        ([1, 1, -0.6], 2, False),
        ([3, -1, -1], 1, True),
        ([1, -1, 0], 1, False),
    ],
)
def test_membership_examples(lam, k, inside):
    assert bool(in_cone(np.array(lam, float), k)) is inside


def test_margin_and_normalized_margin():
    lam = np.array([[2.0, 2.0, 2.0], [0.0, 0.0, 0.0]])
    assert np.allclose(margin(lam, 3), [2.0, 0.0])
    assert np.allclose(normalized_margin(lam, 3), [1.0, 0.0])
    assert normalized_margin(np.array([7.0, 7.0, 7.0]), 2) == pytest.approx(1.0)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_kappa_is_n_minus_k(n):
    for k in range(1, n + 1):
        assert kappa_gamma(n, k) == n - k


def test_theta_positive_cone_exact():
    for n in (3, 4):
        c = ConeSpec(n, n)
        assert c.theta_hat == 1.0 / n
        assert c.theta_cert is None


def test_theta_certificates_are_self_consistent():
    for n, k in [(3, 1), (3, 2), (4, 2), (4, 3)]:
        c = ConeSpec(n, k, theta_budget=4000)
        cert = c.theta_cert
        assert in_cone(cert, k)
        assert np.all(cert[: c.kappa] < 0) and np.all(cert[c.kappa :] > 0)
        assert theta_ratio(np.abs(cert), n, c.kappa) == pytest.approx(c.theta_hat)
        assert 0 < c.theta_hat < 1.0 / c.kappa


def test_theta_gamma1_n3_near_supremum():
    c = ConeSpec(3, 1)
    assert c.theta_hat >= 1.0 / 3.0 - 1e-3


def test_f_value_and_grad():
    lam = np.array([1.0, 2.0, 3.0])
    assert f_value(lam, 2) == pytest.approx(math.sqrt(11))
    h = 1e-6
    grad = f_grad(lam, 2)
    fd = [(f_value(lam + h * e, 2) - f_value(lam - h * e, 2)) / (2 * h) for e in np.eye(3)]
    assert np.allclose(grad, fd, atol=1e-8)
    assert f_value(np.array([1.0, 0.0, 0.0]), 2) == 0.0
    with pytest.raises(ConeViolation):
        f_value(np.array([1.0, -2.0, 0.0]), 2)
    with pytest.raises(ConeViolation):
        f_grad(np.array([1.0, 0.0, 0.0]), 2)


def _cone_member(n, k, seed):
    return sample_cone(n, k, 1, np.random.default_rng(seed))[0]


@given(st.sampled_from([(3, 1), (3, 2), (3, 3), (4, 2), (4, 3)]), st.integers(0, 10**6), st.integers(0, 10**6),
       st.floats(0.01, 0.99))
def test_concavity(nk, s1, s2, t):
    n, k = nk
    a, b = _cone_member(n, k, s1), _cone_member(n, k, s2)
    mid = f_value(t * a + (1 - t) * b, k)
    assert mid >= t * f_value(a, k) + (1 - t) * f_value(b, k) - 1e-9 * (1 + mid)


@given(st.sampled_from([(3, 1), (3, 2), (4, 3)]), st.integers(0, 10**6), st.floats(0.01, 100))
def test_homogeneity_and_symmetry(nk, seed, s):
    n, k = nk
    lam = _cone_member(n, k, seed)
    assert f_value(s * lam, k) == pytest.approx(s * f_value(lam, k), rel=1e-9)
    perm = np.random.default_rng(seed).permutation(n)
    assert f_value(lam[perm], k) == pytest.approx(f_value(lam, k), rel=1e-12)


@given(st.sampled_from([(3, 1), (3, 2), (4, 2)]), st.integers(0, 10**6), st.floats(0.0, 3.0))
def test_monotone_and_cone_convex_in_positive_directions(nk, seed, step):
    n, k = nk
    lam = _cone_member(n, k, seed)
    bump = np.zeros(n)
    bump[seed % n] = step
    assert in_cone(lam + bump, k)
    assert f_value(lam + bump, k) >= f_value(lam, k) - 1e-12
    assert np.all(f_grad(lam, k) > 0)


@given(vec3, st.integers(1, 3))
def test_nested_cones(lam, k):
    assume(np.abs(lam).max() > 1e-3)
    if k < 3 and in_cone(lam, k + 1):
        assert in_cone(lam, k)


def test_gradient_share_inequality_small_sample():
    for n, k in [(3, 1), (3, 2), (4, 2)]:
        rep = check_theorem21(ConeSpec(n, k), 2000, 1)
        assert rep["violations"] == 0


def test_addistruc_property():
    for n, k in [(3, 1), (3, 3), (4, 2)]:
        rep = check_addistruc(ConeSpec(n, k), 500, 2)
        assert rep["violations"] == 0 and rep["boundary_ok"]


def test_gate_alpha_minus_one_examples():
    c = ConeSpec(3, 2)
    p = validate_params(3, -1, 0.0, c)
    assert p.rho == -1.0
    assert p.gamma == pytest.approx(1.0)
    assert p.c == pytest.approx(1.0)
    with pytest.raises(GateError) as exc:
        validate_params(3, -1, 1.5, c)
    assert "tau_range" in exc.value.failed


def test_gate_alpha_plus_one_threshold():
    c = ConeSpec(3, 1)
    thr = tau_threshold(3, c)
    assert thr == pytest.approx(1.0 + (1.0 - c.kappa * c.theta_hat))
    with pytest.raises(GateError):
        validate_params(3, 1, thr - 1e-3, c)
    p = validate_params(3, 1, thr + 0.5, c)
    assert p.rho > 0
    vec = np.ones(3)
    vec[-1] = 1 - p.rho
    assert in_cone(vec, 1)
    with pytest.raises(GateError):
        validate_params(3, 0, 0.0, c)


def test_gate_report_lists_all_gates():
    rep = gate_report(4, -1, -2.0, ConeSpec(4, 3))
    assert set(rep["gates"]) >= {"alpha", "dimension", "tau_range", "rho_nonzero", "rho_bound", "rho_vector_membership"}
    assert all(rep["gates"].values())


def test_cone_spec_rejects_bad_k():
    with pytest.raises(ValueError):
        ConeSpec(3, 4)
    with pytest.raises(ValueError):
        ConeSpec(3, 0)
