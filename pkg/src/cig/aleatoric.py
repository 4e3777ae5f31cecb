"""Running estimate of the shared isotropic aleatoric variance.

Residuals are taken against the ensemble *mean*: residuals of individual
members would mix epistemic disagreement into the noise estimate. With a
finite ensemble the mean still carries some epistemic error, so the estimate
sits above the true noise floor, which only softens the prefix correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SIGMA2_FLOOR",
    "AleatoricEstimate",
    "mean_residuals",
    "update_sigma",
    "ridge_value",
]

#: Stand-in variance used by :func:`ridge_value` before the first update.
SIGMA2_FLOOR = 1e-6


@dataclass(frozen=True)
class AleatoricEstimate:
    sigma2: float = 0.0
    beta: float = 0.99
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")


def mean_residuals(mean_predictions, next_states) -> np.ndarray:
    """Per-transition squared error of the ensemble mean, divided by ``d``."""
    mean_predictions = np.atleast_2d(np.asarray(mean_predictions, dtype=np.float64))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    if mean_predictions.shape != next_states.shape:
        raise ValueError(
            f"prediction shape {mean_predictions.shape} != target shape {next_states.shape}"
        )
    return ((next_states - mean_predictions) ** 2).mean(axis=1)


def update_sigma(estimate: AleatoricEstimate, residuals) -> AleatoricEstimate:
    """EMA update with the batch-mean residual; the first batch is taken as is."""
    residuals = np.asarray(residuals, dtype=np.float64).ravel()
    if residuals.size == 0:
        raise ValueError("need at least one residual (B >= 1)")
    if np.any(residuals < 0) or not np.all(np.isfinite(residuals)):
        raise ValueError("residuals are squared errors and must be finite and >= 0")
    batch = float(residuals.mean())
    if not estimate.initialized:
        sigma2 = batch
    else:
        sigma2 = estimate.beta * estimate.sigma2 + (1.0 - estimate.beta) * batch
    return AleatoricEstimate(sigma2, estimate.beta, True)


def ridge_value(estimate: AleatoricEstimate, d: int, multiplier: float = 1.0) -> float:
    """Kernel ridge ``multiplier * sigma2 * d`` (floored before any data)."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not multiplier > 0:
        raise ValueError(f"multiplier must be > 0, got {multiplier}")
    sigma2 = estimate.sigma2 if estimate.sigma2 > 0 else SIGMA2_FLOOR
    return multiplier * sigma2 * d
