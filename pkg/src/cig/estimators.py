"""Estimator wrapper around the reward functions.

:class:`CIGRewardTransformer` learns the aleatoric scale from the ensemble
mean's residuals (``fit`` / ``partial_fit``) and maps member predictions to
per-step rewards (``transform``). The pure functions in :mod:`cig.kernel`
and :mod:`cig.reward` remain the primary interface; this class packages them
for pipelines and parameter sweeps.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .aleatoric import AleatoricEstimate, mean_residuals, ridge_value, update_sigma
from .kernel import centre, trace_kernel
from .reward import cig_reward_arrays, no_trace_reward_arrays

__all__ = ["CIGRewardTransformer"]

VARIANTS = ("cig", "no_prefix", "lifelong_only", "no_trace")


class CIGRewardTransformer(TransformerMixin, BaseEstimator):
    """Per-step rewards from ensemble member predictions.

    Parameters
    ----------
    variant : {"cig", "no_prefix", "lifelong_only", "no_trace"}, default="cig"
    ridge_multiplier : float, default=1.0
        Scales the kernel ridge ``sigma2 * d``.
    beta : float, default=0.99
        EMA momentum of the ``sigma2`` estimate across ``partial_fit`` calls.

    Attributes
    ----------
    sigma2_ : float
        Current aleatoric variance estimate.
    n_batches_ : int
        Residual batches seen.
    """

    def __init__(self, variant="cig", ridge_multiplier=1.0, beta=0.99):
        self.variant = variant
        self.ridge_multiplier = ridge_multiplier
        self.beta = beta

    def _validate_params(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.ridge_multiplier > 0:
            raise ValueError(f"ridge_multiplier must be > 0, got {self.ridge_multiplier}")

    def fit(self, X, y):
        """Estimate ``sigma2`` from one batch.

        Parameters
        ----------
        X : array of shape (B, d)
            Ensemble-mean next-state predictions.
        y : array of shape (B, d)
            Observed next states.
        """
        for attr in ("_estimate", "sigma2_", "n_batches_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X, y)

    def partial_fit(self, X, y):
        """EMA update of ``sigma2`` with one more residual batch."""
        self._validate_params()
        X = check_array(X)
        y = check_array(y)
        estimate = getattr(self, "_estimate", None) or AleatoricEstimate(beta=self.beta)
        self._estimate = update_sigma(estimate, mean_residuals(X, y))
        self.sigma2_ = self._estimate.sigma2
        self.n_batches_ = getattr(self, "n_batches_", 0) + 1
        return self

    def ridge(self, d: int) -> float:
        check_is_fitted(self, "sigma2_")
        return ridge_value(self._estimate, d, self.ridge_multiplier)

    def transform(self, X):
        """Rewards for member predictions.

        Parameters
        ----------
        X : array of shape (M, T, d) or (N, M, T, d)

        Returns
        -------
        ndarray of shape (T,) or (N, T)
        """
        check_is_fitted(self, "sigma2_")
        self._validate_params()
        P = check_array(X, allow_nd=True, ensure_2d=False)
        if P.ndim not in (3, 4):
            raise ValueError(f"expected (M, T, d) or (N, M, T, d) predictions, got shape {P.shape}")
        M, d = P.shape[-3], P.shape[-1]
        if M < 2:
            raise ValueError(f"need at least 2 ensemble members, got M={M}")
        deltas = centre(P)
        K = trace_kernel(deltas)
        ridge = self.ridge(d)
        if self.variant == "cig":
            return cig_reward_arrays(K, ridge)[0]
        lifelong = np.diagonal(K, axis1=-2, axis2=-1)
        if self.variant == "no_prefix":
            return np.log(lifelong + ridge)
        if self.variant == "lifelong_only":
            if not (lifelong > 0).all():
                raise ValueError("lifelong-only reward undefined at zero disagreement")
            return np.log(lifelong)
        step_grams = np.einsum("...atj,...btj->...tab", deltas, deltas) / M
        return no_trace_reward_arrays(np.cumsum(step_grams, axis=-3), ridge / d)
