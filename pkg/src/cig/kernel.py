"""Ensemble-disagreement kernels.

Member predictions along one imagined rollout are centred on the ensemble
mean; the resulting deviations feed two objects:

* the trace-reduced ``T x T`` kernel ``K`` (each ``d x d`` epistemic block
  collapsed to its trace) and its ridged form ``K + ridge * I``;
* the ``M x M`` Gram matrix of stacked member deviations, which carries the
  full (non trace-reduced) covariance through the Sylvester determinant
  identity.

Array-level helpers accept arbitrary leading batch axes so the planner can
score many candidate rollouts in one call with the same floating point path
as a single rollout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DeviationTensor",
    "KernelMatrix",
    "FullCovariance",
    "MAX_DENSE_DIM",
    "RANK_RTOL",
    "centre",
    "trace_kernel",
    "member_gram",
    "compute_deviations",
    "build_kernel",
    "build_full_covariance_gram",
    "dense_covariance",
    "numerical_rank",
    "save_kernel_csv",
]

#: Largest ``T * d`` for which the dense epistemic covariance is materialized.
MAX_DENSE_DIM = 4096
#: Eigenvalues below ``RANK_RTOL * lambda_max`` count as zero.
RANK_RTOL = 1e-9


def centre(predictions: np.ndarray) -> np.ndarray:
    """Subtract the ensemble mean over the member axis (``-3``)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    return predictions - predictions.mean(axis=-3, keepdims=True)


def _gram_rows(rows: np.ndarray) -> np.ndarray:
    # explicit transposed copy: numpy routes ``A @ A.T`` on a shared buffer to
    # syrk for 2-D input but not for stacks, which breaks batch/single parity
    return rows @ np.ascontiguousarray(np.swapaxes(rows, -1, -2))


def trace_kernel(deltas: np.ndarray) -> np.ndarray:
    """Trace-reduced kernel of deviations shaped ``(..., M, T, d)``.

    ``K[j, t] = (1/M) sum_k <deltas[k, j], deltas[k, t]>``. Batched input
    gives bit-identical slices to per-rollout calls.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    n_members, horizon, dim = deltas.shape[-3:]
    # (..., T, M*d) rows of flattened per-step deviations
    rows = np.ascontiguousarray(np.swapaxes(deltas, -3, -2)).reshape(
        deltas.shape[:-3] + (horizon, n_members * dim)
    )
    K = _gram_rows(rows) / n_members
    return 0.5 * (K + np.swapaxes(K, -1, -2))


def member_gram(deltas: np.ndarray) -> np.ndarray:
    """``M x M`` Gram matrix ``G[a, b] = (1/M) <d_a, d_b>`` of stacked deviations."""
    deltas = np.asarray(deltas, dtype=np.float64)
    n_members = deltas.shape[-3]
    stacked = deltas.reshape(deltas.shape[:-2] + (-1,))
    G = _gram_rows(stacked) / n_members
    return 0.5 * (G + np.swapaxes(G, -1, -2))


@dataclass(frozen=True)
class DeviationTensor:
    """Centred ensemble deviations ``deltas[k, t, i]`` for one rollout."""

    deltas: np.ndarray

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=np.float64)
        if deltas.ndim != 3:
            raise ValueError(f"deltas must be (M, T, d), got shape {deltas.shape}")
        deltas.setflags(write=False)
        object.__setattr__(self, "deltas", deltas)

    @property
    def M(self) -> int:
        return self.deltas.shape[0]

    @property
    def T(self) -> int:
        return self.deltas.shape[1]

    @property
    def d(self) -> int:
        return self.deltas.shape[2]

    def stacked(self) -> np.ndarray:
        """Per-member deviation vectors of length ``T * d``, shape ``(M, T*d)``."""
        return self.deltas.reshape(self.M, -1)


@dataclass(frozen=True)
class KernelMatrix:
    K: np.ndarray
    ridge: float

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        K = np.array(self.K, dtype=np.float64)
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "ridge", float(self.ridge))

    @property
    def T(self) -> int:
        return self.K.shape[0]

    @property
    def K_ridged(self) -> np.ndarray:
        return self.K + self.ridge * np.eye(self.T)

    @property
    def lifelong(self) -> np.ndarray:
        return np.diag(self.K).copy()


@dataclass(frozen=True)
class FullCovariance:
    """Member-space view of the full epistemic covariance ``C = D D^T``."""

    gram_G: np.ndarray
    sigma2: float
    deviations: DeviationTensor

    @property
    def M(self) -> int:
        return self.gram_G.shape[0]

    @property
    def Td(self) -> int:
        return self.deviations.T * self.deviations.d

    def logdet_sylvester(self) -> float:
        """``log det(sigma2 I_Td + C)`` evaluated in ``M x M`` space."""
        _, logdet = np.linalg.slogdet(self.sigma2 * np.eye(self.M) + self.gram_G)
        return (self.Td - self.M) * np.log(self.sigma2) + logdet


def compute_deviations(member_predictions) -> DeviationTensor:
    """Centre ``(M, T, d)`` member predictions on their ensemble mean."""
    preds = np.asarray(member_predictions, dtype=np.float64)
    if preds.ndim != 3:
        raise ValueError(f"member predictions must be (M, T, d), got shape {preds.shape}")
    M, T, d = preds.shape
    if M < 2:
        raise ValueError(f"need at least 2 ensemble members for disagreement, got M={M}")
    if T < 1 or d < 1:
        raise ValueError(f"need T >= 1 and d >= 1, got T={T}, d={d}")
    bad = ~np.isfinite(preds)
    if bad.any():
        k, t, _ = np.argwhere(bad)[0]
        raise ValueError(f"non-finite prediction from member k={k} at step t={t}")
    return DeviationTensor(centre(preds))


def build_kernel(dev: DeviationTensor, ridge: float) -> KernelMatrix:
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    return KernelMatrix(trace_kernel(dev.deltas), ridge)


def build_full_covariance_gram(dev: DeviationTensor, sigma2: float) -> FullCovariance:
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    return FullCovariance(member_gram(dev.deltas), float(sigma2), dev)


def dense_covariance(dev: DeviationTensor) -> np.ndarray:
    """Materialize the ``Td x Td`` epistemic covariance (verification only)."""
    if dev.T * dev.d > MAX_DENSE_DIM:
        raise ValueError(
            f"T*d = {dev.T * dev.d} exceeds the dense materialization cap {MAX_DENSE_DIM}"
        )
    D = dev.stacked()
    return D.T @ D / dev.M


def numerical_rank(A, rtol: float = RANK_RTOL) -> int:
    """Count eigenvalues of symmetric ``A`` above ``rtol * lambda_max``."""
    eig = np.linalg.eigvalsh(np.asarray(A, dtype=np.float64))
    top = eig[-1] if eig.size else 0.0
    if top <= 0:
        return 0
    return int(np.sum(eig > rtol * top))


def save_kernel_csv(kernel: KernelMatrix, path) -> None:
    """Debug dump of ``K``, row-major, 17 significant digits."""
    np.savetxt(path, kernel.K, fmt="%.17g", delimiter=",")
