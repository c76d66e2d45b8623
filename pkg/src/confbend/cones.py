"""Garding cones, the concave operator sigma_k^(1/k), and their structure constants.

Everything here is vectorized over leading axes: a ``lam`` argument of shape
``(..., n)`` is a batch of eigenvalue vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ConeViolation(ValueError):
    """Raised when eigenvalues leave the cone where the operator is defined."""

    def __init__(self, message, points=None, margins=None):
        super().__init__(message)
        self.points = points
        self.margins = margins


class GateError(ValueError):
    """A parameter gate failed; ``failed`` lists the gate names."""

    def __init__(self, failed: list[str], detail: dict):
        super().__init__("parameter gates failed: " + ", ".join(failed))
        self.failed = failed
        self.detail = detail


def elementary(lam: np.ndarray, kmax: int) -> np.ndarray:
    """Elementary symmetric polynomials e_0 .. e_kmax, stacked on the last axis.

    Uses e_j(l_1..l_m) = e_j(l_1..l_{m-1}) + l_m e_{j-1}(l_1..l_{m-1}).
    """
    lam = np.asarray(lam, dtype=float)
    e = np.zeros(lam.shape[:-1] + (kmax + 1,))
    e[..., 0] = 1.0
    for m in range(lam.shape[-1]):
        lm = lam[..., m : m + 1]
        e[..., 1:] = e[..., 1:] + lm * e[..., :-1]
    return e


def sigma_k(lam, k: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if k == 0:
        return np.ones(lam.shape[:-1])
    if not 1 <= k <= lam.shape[-1]:
        raise ValueError(f"k must lie in 1..{lam.shape[-1]}, got {k}")
    return elementary(lam, k)[..., k]


def sigma_k_removed(lam, k: int) -> np.ndarray:
    """sigma_k of lam with the i-th entry removed, for every i (last axis)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.empty(lam.shape)
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        out[..., i] = 1.0 if k == 0 else elementary(rest, k)[..., k]
    return out


def margin(lam, k: int) -> np.ndarray:
    """Admissibility margin min_{j<=k} sigma_j(lam) / binom(n, j)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = elementary(lam, k)
    binoms = np.array([math.comb(n, j) for j in range(1, k + 1)], dtype=float)
    return np.min(e[..., 1:] / binoms, axis=-1)


def normalized_margin(lam, k: int) -> np.ndarray:
    """Margin of lam / max|lam| per point (0 where lam vanishes); scale free."""
    lam = np.asarray(lam, dtype=float)
    scale = np.abs(lam).max(axis=-1, keepdims=True)
    out = margin(lam / np.where(scale > 0, scale, 1.0), k)
    return np.where(scale[..., 0] > 0, out, 0.0)


def in_cone(lam, k: int, delta: float = 0.0) -> np.ndarray:
    """sigma_j(lam) > delta * binom(n, j) for every j = 1..k."""
    return margin(lam, k) > delta


@dataclass
class ConeSpec:
    """The pair (f, Gamma) = (sigma_k^(1/k), Gamma_k) in R^n.

    Other (f, Gamma) pairs can be used wherever a ConeSpec is expected by
    providing the same attributes: ``n``, ``varsigma``, ``kappa``,
    ``theta_hat`` and the methods ``f_value``, ``f_grad``, ``margin``,
    ``contains``.
    """

    n: int
    k: int
    theta_budget: int = 20000
    rng_seed: int = 0
    kappa: int = field(init=False)
    theta_hat: float = field(init=False)
    theta_cert: np.ndarray | None = field(init=False, repr=False)

    varsigma = 1.0

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        self.kappa = kappa_gamma(self.n, self.k)
        self.theta_hat, self.theta_cert = theta_gamma(
            self.n, self.k, self.theta_budget, rng_seed=self.rng_seed
        )

    @property
    def name(self) -> str:
        return f"sigma_{self.k}^(1/{self.k}) on Gamma_{self.k} (n={self.n})"

    def margin(self, lam) -> np.ndarray:
        return margin(lam, self.k)

    def contains(self, lam, delta: float = 0.0) -> np.ndarray:
        return in_cone(lam, self.k, delta)

    def f_value(self, lam) -> np.ndarray:
        return f_value(lam, self.k)

    def f_grad(self, lam) -> np.ndarray:
        return f_grad(lam, self.k)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "kappa": self.kappa,
            "theta_hat": self.theta_hat,
            "certificate": None if self.theta_cert is None else self.theta_cert.tolist(),
        }


def _closure_violations(lam, k):
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    scale = np.max(np.abs(lam), axis=-1, keepdims=True)
    e = elementary(lam, k)[..., 1:]
    tol = 1e-12 * scale ** np.arange(1, k + 1) * np.array([math.comb(n, j) for j in range(1, k + 1)])
    return np.any(e < -tol, axis=-1)


def f_value(lam, k: int) -> np.ndarray:
    """sigma_k^(1/k); raises ConeViolation outside the closed cone."""
    lam = np.asarray(lam, dtype=float)
    bad = _closure_violations(lam, k)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))
        raise ConeViolation(
            f"{len(idx)} eigenvalue vector(s) outside closed Gamma_{k}",
            points=idx,
            margins=np.atleast_1d(margin(lam, k))[np.atleast_1d(bad)],
        )
    return np.maximum(sigma_k(lam, k), 0.0) ** (1.0 / k)


def f_grad(lam, k: int) -> np.ndarray:
    """Gradient of sigma_k^(1/k) on the open cone."""
    lam = np.asarray(lam, dtype=float)
    s = sigma_k(lam, k)
    if np.any(s <= 0):
        raise ConeViolation(f"gradient requested outside open Gamma_{k}")
    return (s ** (1.0 / k - 1.0) / k)[..., None] * sigma_k_removed(lam, k - 1)


def kappa_gamma(n: int, k: int) -> int:
    """Largest k' with (0,..,0,1,..,1) (k' zeros) in Gamma_k, by direct test."""
    best = 0
    for kp in range(n):
        v = np.array([0.0] * kp + [1.0] * (n - kp))
        if in_cone(v, k):
            best = kp
    return best


def theta_ratio(a: np.ndarray, n: int, kappa: int) -> np.ndarray:
    """a_1 / (n (sum_{i>kappa} a_i - sum_{i=2..kappa} a_i)) for positive a."""
    a = np.asarray(a, dtype=float)
    den = a[..., kappa:].sum(axis=-1) - a[..., 1:kappa].sum(axis=-1)
    return a[..., 0] / (n * den)


def theta_point(a: np.ndarray, kappa: int) -> np.ndarray:
    p = np.array(a, dtype=float)
    p[..., :kappa] *= -1.0
    return p


def theta_gamma(n: int, k: int, budget: int = 20000, starts: int = 8, rng_seed: int = 0):
    """Certified lower bound for the structure constant of Gamma_k.

    Returns ``(theta_hat, certificate)``.  For the positive cone the value
    is exactly 1/n and the certificate is None.  Otherwise the ratio is
    maximized over feasible points by multistart pattern search in log
    coordinates (coordinate moves plus pairwise exchange moves, step
    halving); every evaluated feasible point is a valid lower bound.
    """
    if k == n:
        return 1.0 / n, None
    kappa = kappa_gamma(n, k)
    evals = 0
    best_val, best_a = -np.inf, None
    per_start = max(budget // starts, 1)

    def feasible(a):
        return bool(in_cone(theta_point(a, kappa), k))

    for s in range(starts):
        rng = np.random.default_rng([rng_seed, s])
        a = None
        for _ in range(200):
            cand = np.exp(rng.normal(size=n))
            cand[:kappa] *= 10.0 ** rng.uniform(-4, -1)
            evals += 1
            if feasible(cand):
                a = cand
                break
        if a is None:
            continue
        t = np.log(a)
        val = float(theta_ratio(a, n, kappa))
        step = 1.0
        moves = [np.eye(n)[i] for i in range(n)]
        moves += [np.eye(n)[i] - np.eye(n)[j] for i in range(n) for j in range(n) if i != j]
        used = 0
        while used < per_start and step > 1e-13:
            improved = False
            for mv in moves:
                for sgn in (1.0, -1.0):
                    cand_t = t + sgn * step * mv
                    cand = np.exp(cand_t)
                    used += 1
                    if not feasible(cand):
                        continue
                    cv = float(theta_ratio(cand, n, kappa))
                    if cv > val:
                        t, val, improved = cand_t, cv, True
            if not improved:
                step *= 0.5
        evals += used
        if val > best_val:
            best_val, best_a = val, np.exp(t)
    if best_a is None:
        raise RuntimeError(f"no feasible point found for Gamma_{k}, n={n} within budget {budget}")
    cert = theta_point(best_a, kappa)
    # recompute from the certificate itself so the pair is self-consistent
    theta = float(theta_ratio(np.abs(cert), n, kappa))
    return theta, cert


def sample_cone(n: int, k: int, count: int, rng: np.random.Generator, boundary_fraction: float = 0.5) -> np.ndarray:
    """Random members of Gamma_k: positive draws pushed toward the boundary."""
    out = []
    have = 0
    while have < count:
        m = 4 * (count - have) + 16
        lam = np.exp(rng.normal(size=(m, n)))
        push = rng.random(m) < boundary_fraction
        mask = rng.random((m, n)) < 0.5
        shift = rng.uniform(0.0, 1.5, size=(m, n)) * lam.max(axis=1, keepdims=True)
        lam = np.where(push[:, None] & mask, lam - shift, lam)
        lam = lam[in_cone(lam, k)]
        out.append(lam)
        have += len(lam)
    return np.concatenate(out)[:count]


@dataclass(frozen=True)
class EquationParams:
    n: int
    alpha: int
    tau: float
    cone: ConeSpec
    varsigma: float
    rho: float
    gamma: float
    c: float

    @property
    def k(self) -> int:
        return self.cone.k

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha,
            "tau": self.tau,
            "k": self.cone.k,
            "varsigma": self.varsigma,
            "rho": self.rho,
            "gamma": self.gamma,
            "c": self.c,
            "kappa": self.cone.kappa,
            "theta_hat": self.cone.theta_hat,
        }


def tau_threshold(n: int, cone: ConeSpec) -> float:
    """Lower bound on tau for alpha = +1, using the certified theta."""
    return 1.0 + (n - 2) * (1.0 - cone.kappa * cone.theta_hat)


def gate_report(n: int, alpha: int, tau: float, cone: ConeSpec) -> dict:
    gates = {}
    gates["alpha"] = alpha in (-1, 1)
    gates["dimension"] = n >= 3 and cone.n == n
    if alpha == -1:
        gates["tau_range"] = tau < 1
    elif alpha == 1:
        gates["tau_range"] = tau > tau_threshold(n, cone)
    else:
        gates["tau_range"] = False
    detail = {"gates": gates}
    if gates["tau_range"] and gates["dimension"]:
        rho = (n - 2) / (tau - 1)
        bound = 1.0 / (1.0 - cone.kappa * cone.theta_hat)
        gates["rho_nonzero"] = rho != 0
        gates["rho_bound"] = rho < bound
        vec = np.ones(n)
        vec[-1] = 1.0 - rho
        gates["rho_vector_membership"] = bool(in_cone(vec, cone.k))
        detail.update(rho=rho, rho_bound=bound, rho_vector=vec.tolist())
    return detail


def validate_params(n: int, alpha: int, tau: float, cone: ConeSpec) -> EquationParams:
    detail = gate_report(n, alpha, tau, cone)
    failed = [name for name, ok in detail["gates"].items() if not ok]
    if failed or "rho" not in detail:
        raise GateError(failed or ["tau_range"], detail)
    rho = (n - 2) / (tau - 1)
    gamma = (tau - 2) * (n - 2) / (2 * (tau - 1))
    vs = cone.varsigma
    c = ((n - 2) / (alpha * (tau - 1))) ** vs
    return EquationParams(n, alpha, float(tau), cone, vs, rho, gamma, c)


def check_theorem21(cone: ConeSpec, samples: int, rng_seed: int = 0) -> dict:
    """f_i >= theta_hat * sum_j f_j for the kappa+1 smallest eigenvalues."""
    rng = np.random.default_rng(rng_seed)
    lam = np.sort(sample_cone(cone.n, cone.k, samples, rng), axis=-1)
    fi = cone.f_grad(lam)
    total = fi.sum(axis=-1, keepdims=True)
    slack = 1e-12 * total
    lead = fi[:, : cone.kappa + 1]
    bad_lower = np.any(lead < cone.theta_hat * total - slack, axis=-1)
    bad_sign = np.any(fi < -slack, axis=-1)
    bad = bad_lower | bad_sign
    report = {
        "cone": cone.to_json(),
        "samples": int(samples),
        "violations": int(bad.sum()),
        "min_ratio": float(np.min(lead / total)),
    }
    if bad.any():
        report["witness"] = lam[np.argmax(bad)].tolist()
    return report


def check_addistruc(cone: ConeSpec, samples: int, rng_seed: int = 0) -> dict:
    """f(t lam) > f(mu) once t exceeds f(mu)/f(lam), for random lam, mu."""
    rng = np.random.default_rng(rng_seed)
    lam = sample_cone(cone.n, cone.k, samples, rng)
    mu = sample_cone(cone.n, cone.k, samples, rng)
    flam, fmu = cone.f_value(lam), cone.f_value(mu)
    t = 2.0 * fmu / flam
    ok = cone.f_value(t[:, None] * lam) > fmu
    boundary = np.zeros(cone.n)
    if cone.k > 1:
        boundary[-1] = 1.0
    else:
        boundary[:2] = (1.0, -1.0)
    f_boundary = float(cone.f_value(boundary))
    ok_boundary = f_boundary == 0.0 and bool(np.all(cone.f_value(1e-3 * lam) > f_boundary))
    return {"cone": cone.to_json(), "samples": int(samples), "violations": int((~ok).sum()), "boundary_ok": ok_boundary}
