"""Brute-force verifiers for the identities and bounds the library relies on.

Each check draws its own seeded instances, compares the library route
against an independent computation (eigenvalues, dense matrices, Monte
Carlo) and returns an :class:`OracleReport`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .baselines import p2e_reward
from .kernel import (
    DeviationTensor,
    KernelMatrix,
    build_full_covariance_gram,
    build_kernel,
    dense_covariance,
    numerical_rank,
    trace_kernel,
)
from .reward import cig_reward_arrays, cig_rewards

__all__ = [
    "OracleReport",
    "EXACT_TOL",
    "verify_logdet_decomposition",
    "verify_sylvester",
    "verify_rank_bounds",
    "verify_gaussian_bound",
    "verify_propositions",
    "verify_kronecker",
    "verify_p2e_diagonal",
    "run_all",
]

EXACT_TOL = 1e-9
RANK_GRID = ((2, 3, 5), (3, 15, 40), (1, 4, 16))


@dataclass(frozen=True)
class OracleReport:
    """Outcome of one verification.

    ``max_abs_error`` is the worst discrepancy (or, for inequality checks,
    the worst violation amount; for the Monte-Carlo check the worst excess
    in standard errors). ``passed`` holds iff it is within ``tolerance``.
    """

    check_name: str
    instances: int
    max_abs_error: float
    tolerance: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_error <= self.tolerance)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = self.passed
        return out


def _eigen_logdet(A) -> float:
    return float(np.log(np.linalg.eigvalsh(A)).sum())


def _random_deviations(rng, M, T, d, scale=None):
    scale = float(np.exp(rng.uniform(-2, 1))) if scale is None else scale
    raw = rng.normal(scale=scale, size=(M, T, d))
    return DeviationTensor(raw - raw.mean(axis=0))


def _random_kernel(rng, T):
    M = int(rng.integers(2, 7))
    d = int(rng.integers(1, 9))
    return trace_kernel(_random_deviations(rng, M, T, d).deltas)


def verify_logdet_decomposition(n_instances: int = 1000, T_max: int = 50, seed: int = 0) -> OracleReport:
    """Sum of per-step rewards against an eigenvalue log-determinant."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        T = int(rng.integers(1, T_max + 1))
        K = _random_kernel(rng, T)
        ridge = float(np.exp(rng.uniform(-4, 1)))
        total = cig_rewards(KernelMatrix(K, ridge)).total
        worst = max(worst, abs(total - _eigen_logdet(K + ridge * np.eye(T))))
    return OracleReport("logdet_decomposition", n_instances, worst, EXACT_TOL)


def verify_sylvester(n_instances: int = 1000, seed: int = 0) -> OracleReport:
    """Member-space log-determinant against the dense ``Td x Td`` one."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        M, T, d = int(rng.integers(2, 7)), int(rng.integers(1, 16)), int(rng.integers(1, 9))
        dev = _random_deviations(rng, M, T, d)
        sigma2 = float(np.exp(rng.uniform(-3, 1)))
        full = build_full_covariance_gram(dev, sigma2)
        dense = np.linalg.slogdet(dense_covariance(dev) + sigma2 * np.eye(T * d))[1]
        worst = max(worst, abs(full.logdet_sylvester() - dense))
    return OracleReport("sylvester", n_instances, worst, EXACT_TOL)


def verify_rank_bounds(n_instances: int = 3, seed: int = 0) -> OracleReport:
    """Count rank-bound violations of ``C`` and ``K`` over the ``(M, T, d)`` grid.

    ``n_instances`` random draws per grid cell; ranks are eigenvalue counts
    above ``1e-9 * lambda_max``.
    """
    rng = np.random.default_rng(seed)
    violations = 0
    total = 0
    for M in RANK_GRID[0]:
        for T in RANK_GRID[1]:
            for d in RANK_GRID[2]:
                for _ in range(n_instances):
                    dev = _random_deviations(rng, M, T, d, scale=1.0)
                    violations += numerical_rank(dense_covariance(dev)) > M - 1
                    violations += numerical_rank(trace_kernel(dev.deltas)) > min(T, (M - 1) * d)
                    total += 1
    return OracleReport("rank_bounds", total, float(violations), 0.0, "value is the violation count")


def _mixture_entropy_mc(rng, means, sigma2, n_samples, chunk=200_000):
    """``-mean log p(x)`` for ``x ~ (1/M) sum_k N(mean_k, sigma2 I)`` and its standard error."""
    M, D = means.shape
    logs = []
    remaining = n_samples
    while remaining:
        n = min(chunk, remaining)
        comp = rng.integers(0, M, size=n)
        x = means[comp] + rng.normal(scale=math.sqrt(sigma2), size=(n, D))
        sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(-1)
        logp = logsumexp(-0.5 * sq / sigma2, axis=1) - math.log(M) - 0.5 * D * math.log(2 * math.pi * sigma2)
        logs.append(-logp)
        remaining -= n
    logs = np.concatenate(logs)
    return float(logs.mean()), float(logs.std(ddof=1) / math.sqrt(n_samples))


def gaussian_entropy_bound(means, sigma2) -> float:
    """``0.5 log det(2 pi e Sigma)`` with ``Sigma = C + sigma2 I`` (1/M covariance)."""
    M, D = means.shape
    centred = means - means.mean(axis=0)
    sigma = centred.T @ centred / M + sigma2 * np.eye(D)
    return 0.5 * float(np.linalg.slogdet(2 * math.pi * math.e * sigma)[1])


def verify_gaussian_bound(n_instances: int = 50, mc_samples: int = 1_000_000, seed: int = 0) -> OracleReport:
    """Monte-Carlo mixture entropy never exceeds the moment-matched Gaussian's.

    The reported error is the largest excess ``(H_mc - H_gauss) / SE``;
    the check passes when it is at most 3 standard errors.
    """
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_instances):
        M = int(rng.integers(1, 5))
        D = int(rng.integers(1, 7))
        means = rng.normal(scale=float(np.exp(rng.uniform(-1, 1.5))), size=(M, D))
        sigma2 = float(np.exp(rng.uniform(-1, 1)))
        h_mc, se = _mixture_entropy_mc(rng, means, sigma2, mc_samples)
        worst = max(worst, (h_mc - gaussian_entropy_bound(means, sigma2)) / se)
    note = "" if mc_samples >= 10_000 else f"mc_samples={mc_samples} is below 1e4; standard errors are unreliable"
    return OracleReport("gaussian_bound", n_instances, float(worst), 3.0, note)


def _prop1_violations(rng):
    T = int(rng.integers(1, 13))
    K = _random_kernel(rng, T)
    ridge = float(np.exp(rng.uniform(-3, 1)))
    total = lambda A: float(cig_reward_arrays(A, ridge)[0].sum())  # noqa: E731
    v = rng.normal(size=T)
    monotone = max(0.0, total(K) - total(K + np.outer(v, v)))
    K2 = _random_kernel(rng, T)
    lam = float(rng.uniform(0, 1))
    concave = max(0.0, lam * total(K) + (1 - lam) * total(K2) - total(lam * K + (1 - lam) * K2))
    return max(monotone, concave)


def _prop2_orthogonal(rng):
    T = int(rng.integers(2, 13))
    K = _random_kernel(rng, T)
    t = int(rng.integers(0, T))
    K[t, :] = 0.0
    K[:, t] = 0.0
    K[t, t] = float(np.exp(rng.uniform(-3, 2)))
    ridge = float(np.exp(rng.uniform(-3, 1)))
    r = cig_reward_arrays(K, ridge)[0][t]
    return abs(r - math.log(K[t, t] + ridge))


def _prop2_sandwich(rng):
    t = int(rng.integers(1, 12))
    Kp = _random_kernel(rng, t)
    # duplicated step with scale a in either limit, or a random redundancy vector
    if rng.uniform() < 0.5:
        alpha = np.zeros(t)
        alpha[int(rng.integers(0, t))] = float(np.exp(rng.uniform(-6, 6)))
    else:
        alpha = rng.normal(size=t) * float(np.exp(rng.uniform(-2, 2)))
    K = np.zeros((t + 1, t + 1))
    K[:t, :t] = Kp
    K[:t, t] = K[t, :t] = Kp @ alpha
    K[t, t] = alpha @ Kp @ alpha
    ridge = float(np.exp(rng.uniform(-3, 1)))
    r = float(cig_reward_arrays(K, ridge)[0][t])
    lower = math.log(ridge)
    upper = math.log(ridge) + math.log1p(alpha @ alpha)
    return max(0.0, lower - r, r - upper)


def _prop3_violations(rng):
    T = int(rng.integers(2, 16))
    K = _random_kernel(rng, T)
    eps = float(rng.uniform(0.01, 1.0))
    ridge = float(np.max(np.diag(K)) / eps)
    rewards = cig_reward_arrays(K, ridge)[0]
    gap = np.log(np.diag(K) + ridge) - rewards
    steps_before = np.arange(T)
    x = steps_before * eps**2
    worst = max(0.0, float(-gap.min()))
    ok = x < 1
    if ok.any():
        worst = max(worst, float((gap[ok] + np.log1p(-x[ok])).max()))
    half = x <= 0.5
    worst = max(worst, float((gap[half] - 2 * x[half]).max()))
    return worst


def verify_propositions(n_instances: int = 10_000, seed: int = 0) -> OracleReport:
    """Monotonicity/concavity, limiting cases and frontier-inactivity bounds.

    ``n_instances`` draws for each of the four families; the error is the
    largest violation (or equality residual) seen.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for check in (_prop1_violations, _prop2_orthogonal, _prop2_sandwich, _prop3_violations):
        for _ in range(n_instances):
            worst = max(worst, check(rng))
    return OracleReport("propositions", 4 * n_instances, worst, EXACT_TOL)


def isotropic_deviations(rng, M, T, d):
    """Deviations whose full covariance is ``K kron I_d / d``.

    Members come in ``d`` groups; group ``i`` varies only along dimension
    ``i`` with a shared pre-centred base pattern scaled by ``sqrt(d)``.
    """
    base = rng.normal(size=(M, T))
    base -= base.mean(axis=0)
    deltas = np.zeros((M * d, T, d))
    for i in range(d):
        deltas[i * M : (i + 1) * M, :, i] = base * math.sqrt(d)
    return DeviationTensor(deltas)


def verify_kronecker(n_instances: int = 1000, seed: int = 0) -> OracleReport:
    """``log det(C + s I) = d log det(K + s d I) - d T log d`` for isotropic blocks."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        M, T, d = int(rng.integers(2, 5)), int(rng.integers(1, 8)), int(rng.integers(1, 5))
        dev = isotropic_deviations(rng, M, T, d)
        sigma2 = float(np.exp(rng.uniform(-2, 1)))
        K = trace_kernel(dev.deltas)
        lhs = np.linalg.slogdet(dense_covariance(dev) + sigma2 * np.eye(T * d))[1]
        rhs = d * np.linalg.slogdet(K + sigma2 * d * np.eye(T))[1] - d * T * math.log(d)
        worst = max(worst, abs(lhs - rhs))
    return OracleReport("kronecker", n_instances, worst, EXACT_TOL)


def verify_p2e_diagonal(n_instances: int = 1000, seed: int = 0) -> OracleReport:
    """Per-dimension ensemble variance times ``d`` against the kernel diagonal."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        M, T, d = int(rng.integers(2, 7)), int(rng.integers(1, 16)), int(rng.integers(1, 9))
        preds = rng.normal(size=(M, T, d))
        dev = DeviationTensor(preds - preds.mean(axis=0))
        direct = preds.var(axis=0).sum(axis=-1)
        K = build_kernel(dev, 0.0).K
        worst = max(worst, float(np.abs(p2e_reward(dev) * d - np.diag(K)).max()))
        worst = max(worst, float(np.abs(direct - np.diag(K)).max()))
    return OracleReport("p2e_diagonal", n_instances, worst, 1e-12)


def run_all(seed: int = 0, quick: bool = False) -> list:
    """Every check at its default size (``quick`` shrinks instance counts 10x)."""
    s = 10 if quick else 1
    return [
        verify_logdet_decomposition(1000 // s, 50, seed),
        verify_sylvester(1000 // s, seed),
        verify_rank_bounds(3, seed),
        verify_propositions(10_000 // s, seed),
        verify_gaussian_bound(50 // s, 1_000_000 // s, seed),
        verify_kronecker(1000 // s, seed),
        verify_p2e_diagonal(1000 // s, seed),
    ]
