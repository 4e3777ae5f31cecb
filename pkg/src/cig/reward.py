"""Per-step rewards from the ridged disagreement kernel.

The CIG reward of step ``t`` is the log of the Schur complement of the
leading ``(t-1) x (t-1)`` block of ``K + ridge * I``. Those Schur complements
are the squared diagonal of the lower Cholesky factor, so one factorization
yields the rewards, the lifelong terms (``K_tt``) and the prefix-explained
quadratic forms ``k_<t^T Kr_<t^{-1} k_<t`` (the squared off-diagonal row norms
of the factor).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .kernel import (
    MAX_DENSE_DIM,
    FullCovariance,
    KernelMatrix,
    dense_covariance,
)

__all__ = [
    "Variant",
    "RewardTrace",
    "CholeskyError",
    "NormalizerState",
    "cholesky_pivots",
    "cig_reward_arrays",
    "no_trace_reward_arrays",
    "cig_rewards",
    "no_trace_reduction_rewards",
    "no_prefix_rewards",
    "lifelong_only_rewards",
    "prefix_diagnostics",
    "normalize_rewards",
    "trace_to_jsonl",
    "trace_from_jsonl",
]

NORM_FLOOR = 1e-8


class Variant(str, enum.Enum):
    CIG = "cig"
    NO_TRACE_REDUCTION = "no_trace_reduction"
    NO_PREFIX_REDUNDANCY = "no_prefix_redundancy"
    LIFELONG_ONLY = "lifelong_only"


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a leading principal minor of the ridged kernel is not positive.

    ``index`` is the 0-based pivot (rollout step) where factorization failed,
    ``batch_index`` the failing entry of a batched call (``None`` if unbatched).
    """

    def __init__(self, index, pivot, batch_index=None):
        self.index = int(index)
        self.pivot = float(pivot)
        self.batch_index = batch_index
        where = f" in batch entry {batch_index}" if batch_index is not None else ""
        super().__init__(
            f"ridged kernel is not positive definite: pivot {self.index} "
            f"(step {self.index + 1}) = {self.pivot!r}{where}"
        )


def cholesky_pivots(A: np.ndarray):
    """Column-wise lower Cholesky of (batched) SPD ``A``.

    Returns ``(pivots, explained)`` with ``pivots[..., t] = L[t, t]**2`` and
    ``explained[..., t] = sum_{j<t} L[t, j]**2`` so that
    ``pivots + explained == diag(A)`` up to rounding. Row ``t`` of the factor
    only reads the leading ``(t+1) x (t+1)`` block, and every entry is a
    per-row reduction, so truncating ``A`` or batching it leaves the leading
    outputs bit-identical.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[-1]
    L = np.zeros_like(A)
    pivots = np.empty(A.shape[:-1])
    explained = np.empty(A.shape[:-1])
    for j in range(n):
        row = L[..., j, :j]
        sq = (row * row).sum(axis=-1)
        piv = A[..., j, j] - sq
        bad = ~(piv > 0)
        if np.any(bad):
            if piv.ndim == 0:
                raise CholeskyError(j, piv)
            b = tuple(np.argwhere(bad)[0])
            raise CholeskyError(j, piv[b], batch_index=b if len(b) > 1 else b[0])
        pivots[..., j] = piv
        explained[..., j] = sq
        root = np.sqrt(piv)
        L[..., j, j] = root
        if j + 1 < n:
            cross = (L[..., j + 1 :, :j] * row[..., None, :]).sum(axis=-1)
            L[..., j + 1 :, j] = (A[..., j + 1 :, j] - cross) / root[..., None]
    return pivots, explained


def cig_reward_arrays(K: np.ndarray, ridge: float):
    """Batched CIG rewards; returns ``(rewards, lifelong, prefix_explained)``."""
    K = np.asarray(K, dtype=np.float64)
    T = K.shape[-1]
    if T == 0:
        empty = np.zeros(K.shape[:-1])
        return empty, empty, empty
    pivots, explained = cholesky_pivots(K + ridge * np.eye(T))
    lifelong = np.diagonal(K, axis1=-2, axis2=-1).copy()
    return np.log(pivots), lifelong, explained


def no_trace_reward_arrays(G_prefix: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-step rewards of the full-covariance surrogate, member-space route.

    ``G_prefix[..., t, :, :]`` is the ``M x M`` Gram of deviations summed over
    steps ``<= t``. Applying the Sylvester identity to each leading ``td x td``
    block gives ``sum_{s<=t} r_s = log det(I_M + G_prefix[t] / sigma2)``.
    """
    G_prefix = np.asarray(G_prefix, dtype=np.float64)
    M = G_prefix.shape[-1]
    pivots, _ = cholesky_pivots(np.eye(M) + G_prefix / sigma2)
    cumulative = np.log(pivots).sum(axis=-1)
    return np.diff(cumulative, axis=-1, prepend=0.0)


@dataclass(frozen=True)
class RewardTrace:
    rewards: np.ndarray
    lifelong: np.ndarray
    prefix_explained: np.ndarray
    ridge: float
    variant: Variant

    def __post_init__(self):
        for name in ("rewards", "lifelong", "prefix_explained"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def T(self) -> int:
        return len(self.rewards)

    @property
    def total(self) -> float:
        return float(self.rewards.sum())


def cig_rewards(kernel: KernelMatrix) -> RewardTrace:
    """CIG rewards ``r_t = log(K_tt + ridge - k_<t^T Kr_<t^{-1} k_<t)``.

    Raises
    ------
    CholeskyError
        If the ridged kernel is not positive definite (only possible with
        ``ridge == 0``); the error names the first failing step.
    """
    rewards, lifelong, explained = cig_reward_arrays(kernel.K, kernel.ridge)
    return RewardTrace(rewards, lifelong, explained, kernel.ridge, Variant.CIG)


def no_trace_reduction_rewards(full: FullCovariance, T: int, method: str = "dense") -> RewardTrace:
    """Per-step decomposition of ``log det(sigma2 I_Td + C)`` without trace reduction.

    Step ``t`` collects the log-pivots of its ``d`` rows of the dense Cholesky
    factor, minus the policy-independent ``d * log(sigma2)``. ``method="gram"``
    evaluates the same quantity in ``M x M`` space via the Sylvester identity
    and never materializes ``C``.
    """
    dev = full.deviations
    if T != dev.T:
        raise ValueError(f"T={T} does not match the deviation horizon {dev.T}")
    sigma2 = full.sigma2
    lifelong = np.einsum("kti,kti->t", dev.deltas, dev.deltas) / dev.M
    if T == 0:
        rewards = np.zeros(0)
    elif method == "dense":
        if full.Td > MAX_DENSE_DIM:
            raise ValueError(
                f"T*d = {full.Td} exceeds the dense materialization cap {MAX_DENSE_DIM}"
            )
        C = dense_covariance(dev)
        pivots, _ = cholesky_pivots(C + sigma2 * np.eye(full.Td))
        rewards = np.log(pivots).reshape(T, dev.d).sum(axis=1) - dev.d * np.log(sigma2)
    elif method == "gram":
        per_step = dev.deltas.reshape(dev.M, T, dev.d)
        step_grams = np.einsum("ati,bti->tab", per_step, per_step) / dev.M
        rewards = no_trace_reward_arrays(np.cumsum(step_grams, axis=0), sigma2)
    else:
        raise ValueError(f"unknown method {method!r}; expected 'dense' or 'gram'")
    return RewardTrace(
        rewards, lifelong, np.zeros(T), dev.d * sigma2, Variant.NO_TRACE_REDUCTION
    )


def no_prefix_rewards(kernel: KernelMatrix) -> RewardTrace:
    """``r_t = log(K_tt + ridge)``: the CIG reward with the prefix term removed."""
    if not kernel.ridge > 0:
        raise ValueError(f"no-prefix rewards need ridge > 0, got {kernel.ridge}")
    lifelong = kernel.lifelong
    return RewardTrace(
        np.log(lifelong + kernel.ridge),
        lifelong,
        np.zeros(kernel.T),
        kernel.ridge,
        Variant.NO_PREFIX_REDUNDANCY,
    )


def lifelong_only_rewards(kernel: KernelMatrix) -> RewardTrace:
    """``r_t = log K_tt``, without prefix correction or ridge."""
    lifelong = kernel.lifelong
    bad = np.flatnonzero(~(lifelong > 0))
    if bad.size:
        raise ValueError(
            f"lifelong-only reward undefined at zero disagreement: K_tt <= 0 at step {bad[0] + 1}"
        )
    return RewardTrace(
        np.log(lifelong), lifelong, np.zeros(kernel.T), 0.0, Variant.LIFELONG_ONLY
    )


def prefix_diagnostics(trace: RewardTrace):
    """Prefix-explained fraction per step and the within-rollout Spearman rho.

    Returns ``(explained_fraction, spearman)`` where ``spearman`` is the rank
    correlation between the rewards and ``log K_tt``; ``None`` for ``T < 2``
    or when either ranking is constant.
    """
    if trace.variant is not Variant.CIG:
        raise ValueError(f"prefix diagnostics need a CIG trace, got {trace.variant.value}")
    lifelong = trace.lifelong
    positive = lifelong > 0
    fraction = np.zeros(trace.T)
    fraction[positive] = trace.prefix_explained[positive] / lifelong[positive]
    if trace.T < 2 or not positive.all():
        return fraction, None
    if np.ptp(trace.rewards) == 0 or np.ptp(lifelong) == 0:
        return fraction, None
    rho = stats.spearmanr(trace.rewards, np.log(lifelong)).statistic
    return fraction, float(rho)


@dataclass(frozen=True)
class NormalizerState:
    """Running z-score statistics (EMA of batch mean and variance)."""

    mean: float = 0.0
    var: float = 0.0
    momentum: float = 0.99
    initialized: bool = False
    updates: int = field(default=0, compare=False)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))

    def update(self, raw) -> "NormalizerState":
        raw = np.asarray(raw, dtype=np.float64)
        if raw.size == 0:
            return self
        mean, var = float(raw.mean()), float(raw.var())
        if self.initialized:
            m = self.momentum
            mean = m * self.mean + (1 - m) * mean
            var = m * self.var + (1 - m) * var
        return NormalizerState(mean, var, self.momentum, True, self.updates + 1)

    def apply(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.mean) / max(self.std, NORM_FLOOR)


def normalize_rewards(raw, state: NormalizerState):
    """Update the running statistics with ``raw`` and z-score it against them."""
    state = state.update(raw)
    return state.apply(raw), state


def trace_to_jsonl(trace: RewardTrace) -> str:
    lines = [
        json.dumps(
            {
                "step": t + 1,
                "reward": float(trace.rewards[t]),
                "lifelong": float(trace.lifelong[t]),
                "prefix_explained": float(trace.prefix_explained[t]),
                "variant": trace.variant.value,
                "ridge": trace.ridge,
            }
        )
        for t in range(trace.T)
    ]
    return "".join(line + "\n" for line in lines)


def trace_from_jsonl(text: str) -> RewardTrace:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty reward trace")
    rows.sort(key=lambda r: r["step"])
    return RewardTrace(
        [r["reward"] for r in rows],
        [r["lifelong"] for r in rows],
        [r["prefix_explained"] for r in rows],
        rows[0]["ridge"],
        Variant(rows[0]["variant"]),
    )
