"""Comparison intrinsic rewards with the same per-rollout interface as CIG.

Every function maps a rollout (or a batch of rollouts along leading axes)
to one reward per step, so the planner can swap them by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _mlp
from .kernel import DeviationTensor, trace_kernel

__all__ = [
    "E3B_LAMBDA",
    "APT_K",
    "p2e_reward",
    "p2e_from_deltas",
    "EllipticalState",
    "e3b_reward",
    "e3b_rollout_rewards",
    "e3b_x_p2e_reward",
    "apt_reward",
    "apt_reward_against",
    "RandomNetworkDistillation",
]

E3B_LAMBDA = 0.1
APT_K = 12


def p2e_from_deltas(deltas: np.ndarray) -> np.ndarray:
    """Mean per-dimension ensemble variance from raw deviations ``(..., M, T, d)``."""
    d = deltas.shape[-1]
    return np.diagonal(trace_kernel(deltas), axis1=-2, axis2=-1) / d


def p2e_reward(dev: DeviationTensor) -> np.ndarray:
    """Plan2Explore disagreement ``r_t = K_tt / d`` (1/M variance convention)."""
    return p2e_from_deltas(dev.deltas)


# -- elliptical episodic bonus --------------------------------------------------


def _unit(phi: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(phi, axis=-1, keepdims=True)
    return np.divide(phi, norm, out=np.zeros_like(phi), where=norm > 0)


@dataclass(frozen=True)
class EllipticalState:
    """Running inverse covariance ``C^{-1}`` of the episode's embeddings."""

    inv_cov: np.ndarray
    lambda_ridge: float = E3B_LAMBDA

    def __post_init__(self):
        if not self.lambda_ridge > 0:
            raise ValueError(f"lambda_ridge must be > 0, got {self.lambda_ridge}")
        inv = np.array(self.inv_cov, dtype=np.float64)
        if inv.ndim != 2 or inv.shape[0] != inv.shape[1]:
            raise ValueError(f"inv_cov must be square, got shape {inv.shape}")
        inv.setflags(write=False)
        object.__setattr__(self, "inv_cov", inv)

    @classmethod
    def fresh(cls, embed_dim: int, lambda_ridge: float = E3B_LAMBDA) -> "EllipticalState":
        """Episode-start state ``(1/lambda) I``."""
        return cls(np.eye(embed_dim) / lambda_ridge, lambda_ridge)

    def reset(self) -> "EllipticalState":
        return EllipticalState.fresh(self.embed_dim, self.lambda_ridge)

    @property
    def embed_dim(self) -> int:
        return self.inv_cov.shape[0]


def e3b_reward(state: EllipticalState, embedding) -> tuple[float, EllipticalState]:
    """Bonus ``phi^T C^{-1} phi`` and the Sherman-Morrison updated state.

    The embedding is L2-normalized first; a zero vector earns no bonus.
    """
    phi = np.asarray(embedding, dtype=np.float64)
    if phi.shape != (state.embed_dim,):
        raise ValueError(f"embedding must have shape ({state.embed_dim},), got {phi.shape}")
    if not np.all(np.isfinite(phi)):
        raise ValueError("non-finite embedding")
    phi = _unit(phi)
    u = state.inv_cov @ phi
    bonus = float(phi @ u)
    inv = state.inv_cov - np.outer(u, u) / (1.0 + bonus)
    inv = 0.5 * (inv + inv.T)
    return bonus, EllipticalState(inv, state.lambda_ridge)


def e3b_rollout_rewards(embeddings: np.ndarray, lambda_ridge: float = E3B_LAMBDA) -> np.ndarray:
    """Per-step elliptical bonuses for rollouts ``(..., T, e)``.

    Each rollout starts from a fresh ``(1/lambda) I``; leading axes are
    independent rollouts.
    """
    phi = _unit(np.asarray(embeddings, dtype=np.float64))
    *lead, T, e = phi.shape
    inv = np.broadcast_to(np.eye(e) / lambda_ridge, (*lead, e, e)).copy()
    out = np.empty((*lead, T))
    for t in range(T):
        p = phi[..., t, :]
        u = np.einsum("...ij,...j->...i", inv, p)
        b = np.einsum("...i,...i->...", p, u)
        out[..., t] = b
        inv -= u[..., :, None] * u[..., None, :] / (1.0 + b)[..., None, None]
    return out


def e3b_x_p2e_reward(e3b, p2e):
    """Product composition of the episodic and lifelong bonuses."""
    e3b = np.asarray(e3b, dtype=np.float64)
    p2e = np.asarray(p2e, dtype=np.float64)
    if not (np.all(np.isfinite(e3b)) and np.all(np.isfinite(p2e))):
        raise ValueError("e3b_x_p2e inputs must be finite")
    if np.any(e3b < 0) or np.any(p2e < 0):
        raise ValueError("e3b_x_p2e inputs must be >= 0")
    out = e3b * p2e
    return float(out) if out.ndim == 0 else out


# -- particle kNN entropy ---------------------------------------------------------


def apt_reward(batch_embeddings, k: int = APT_K) -> np.ndarray:
    """``log(1 + mean distance to the k nearest other points)`` within a batch."""
    h = np.asarray(batch_embeddings, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"batch_embeddings must be (B, e), got shape {h.shape}")
    if k < 1 or len(h) <= k:
        raise ValueError(f"apt needs B > k >= 1, got B={len(h)}, k={k}")
    dist, _ = cKDTree(h).query(h, k=k + 1)
    # column 0 is the point itself (distance 0), possibly tied with duplicates;
    # dropping one zero is equivalent either way
    return np.log1p(dist[:, 1:].mean(axis=1))


def apt_reward_against(queries, reference, k: int = APT_K) -> np.ndarray:
    """kNN particle reward of ``queries (..., e)`` against a reference set ``(B, e)``.

    Used in imagination, where the particle set is a replay sample and the
    query states are not part of it.
    """
    q = np.asarray(queries, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if len(ref) < k or k < 1:
        raise ValueError(f"apt needs a reference set of at least k={k} points, got {len(ref)}")
    dist, _ = cKDTree(ref).query(q.reshape(-1, q.shape[-1]), k=k)
    dist = dist.reshape(len(dist), -1)
    return np.log1p(dist.mean(axis=1)).reshape(q.shape[:-1])


# -- random network distillation ----------------------------------------------------


class RandomNetworkDistillation:
    """Prediction error of a trained network against a frozen random one.

    Parameters
    ----------
    n_features : int
        Input (state feature) dimension.
    out_dim : int, default=16
    hidden : int, default=64
    learning_rate : float, default=1e-3
        Adam step size of the predictor.
    seed : int, default=0
        The target uses ``seed`` and the predictor ``seed + 1``.
    """

    def __init__(self, n_features, out_dim=16, hidden=64, learning_rate=1e-3, seed=0):
        sizes = [n_features, hidden, hidden, out_dim]
        self.n_features = n_features
        self.learning_rate = learning_rate
        self.target = _mlp.init_params(sizes, [seed])
        for p in self.target:
            p.setflags(write=False)
        self.predictor = _mlp.init_params(sizes, [seed + 1])
        self._optimizer = _mlp.Optimizer("adam", 0.9)
        self.updates = 0

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[-1]}")
        return X

    def reward(self, X) -> np.ndarray:
        """Squared prediction error ``||f(x) - g(x)||^2`` for inputs ``(..., n_features)``."""
        X = self._check(X)
        flat = X.reshape(-1, self.n_features)
        err = _mlp.forward(self.predictor, flat)[0] - _mlp.forward(self.target, flat)[0]
        return (err**2).sum(axis=-1).reshape(X.shape[:-1])

    def update(self, X) -> float:
        """One predictor step toward the target on visited features; returns the loss."""
        X = self._check(X).reshape(-1, self.n_features)
        y = _mlp.forward(self.target, X)[0]
        losses, grads = _mlp.mse_loss_and_grads(self.predictor, X, y)
        self._optimizer.step(self.predictor, grads, self.learning_rate)
        self.updates += 1
        return float(losses[0])
