import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cig.estimators import CIGRewardTransformer
from cig.kernel import build_kernel, compute_deviations
from cig.reward import cig_rewards, no_prefix_rewards


def _residual_batch(rng, sigma2=0.04, B=500, d=3):
    mean = rng.normal(size=(B, d))
    return mean, mean + rng.normal(scale=np.sqrt(sigma2), size=(B, d))


def test_fit_estimates_noise_and_transform_matches_functions():
    rng = np.random.default_rng(0)
    est = CIGRewardTransformer().fit(*_residual_batch(rng))
    assert est.sigma2_ == pytest.approx(0.04, rel=0.15)
    preds = rng.normal(size=(5, 6, 3))
    kernel = build_kernel(compute_deviations(preds), est.sigma2_ * 3)
    np.testing.assert_array_equal(est.transform(preds), cig_rewards(kernel).rewards)
    flat = est.set_params(variant="no_prefix").transform(preds)
    np.testing.assert_array_equal(flat, no_prefix_rewards(kernel).rewards)


def test_batched_transform():
    rng = np.random.default_rng(1)
    est = CIGRewardTransformer(variant="no_trace").fit(*_residual_batch(rng))
    preds = rng.normal(size=(4, 3, 5, 2))
    batched = est.transform(preds)
    assert batched.shape == (4, 5)
    np.testing.assert_allclose(batched[2], est.transform(preds[2]), rtol=1e-13)


def test_partial_fit_is_ema():
    rng = np.random.default_rng(2)
    est = CIGRewardTransformer(beta=0.5)
    X1, y1 = _residual_batch(rng)
    X2, y2 = _residual_batch(rng, sigma2=1.0)
    first = est.partial_fit(X1, y1).sigma2_
    second_batch = ((y2 - X2) ** 2).mean()
    assert est.partial_fit(X2, y2).sigma2_ == pytest.approx(0.5 * first + 0.5 * second_batch)
    assert est.n_batches_ == 2
    assert est.fit(X1, y1).n_batches_ == 1


def test_unfitted_and_invalid():
    with pytest.raises(NotFittedError):
        CIGRewardTransformer().transform(np.zeros((2, 3, 1)))
    est = clone(CIGRewardTransformer(variant="nope"))
    with pytest.raises(ValueError, match="variant"):
        est.fit(np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        CIGRewardTransformer().fit(np.zeros((2, 1)), np.full((2, 1), np.nan))
