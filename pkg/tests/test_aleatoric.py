import numpy as np
import pytest

from cig.aleatoric import (
    SIGMA2_FLOOR,
    AleatoricEstimate,
    mean_residuals,
    ridge_value,
    update_sigma,
)


def test_fresh_estimate():
    est = AleatoricEstimate()
    assert est.sigma2 == 0.0 and not est.initialized and est.beta == 0.99


def test_first_update_takes_batch_value():
    est = update_sigma(AleatoricEstimate(), [0.25, 0.75])
    assert est.sigma2 == 0.5 and est.initialized


def test_fixed_point():
    est = update_sigma(update_sigma(AleatoricEstimate(), [0.5]), [0.5, 0.5])
    assert est.sigma2 == pytest.approx(0.5, abs=1e-16)


def test_hand_ema():
    est = update_sigma(update_sigma(AleatoricEstimate(beta=0.99), [1.0]), [0.0])
    assert est.sigma2 == pytest.approx(0.99, abs=1e-15)


def test_first_batch_of_zeros_still_initializes():
    est = update_sigma(AleatoricEstimate(), [0.0])
    assert est.initialized and est.sigma2 == 0.0
    est = update_sigma(est, [1.0])
    assert est.sigma2 == pytest.approx(0.01)


def test_negative_residual_rejected():
    with pytest.raises(ValueError):
        update_sigma(AleatoricEstimate(), [0.1, -0.2])


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        update_sigma(AleatoricEstimate(), [])


def test_ema_contracts_by_beta():
    est = update_sigma(AleatoricEstimate(beta=0.9), [5.0])
    c = 2.0
    gap = abs(est.sigma2 - c)
    for _ in range(20):
        est = update_sigma(est, [c])
        new_gap = abs(est.sigma2 - c)
        assert new_gap == pytest.approx(0.9 * gap, rel=1e-12)
        gap = new_gap


@pytest.mark.parametrize(
    "sigma2,d,mult,expected",
    [(0.5, 8, 1.0, 4.0), (0.0, 8, 1.0, 8e-6), (0.5, 8, 2.0, 8.0)],
)
def test_ridge_value(sigma2, d, mult, expected):
    est = AleatoricEstimate(sigma2=sigma2, initialized=sigma2 > 0)
    assert ridge_value(est, d, mult) == pytest.approx(expected, rel=1e-15)
    assert SIGMA2_FLOOR == 1e-6


def test_ridge_floor_is_not_stored():
    est = AleatoricEstimate()
    ridge_value(est, 4)
    assert est.sigma2 == 0.0


def test_mean_residuals_per_dimension():
    pred = np.zeros((3, 4))
    target = np.array([[2.0, 0, 0, 0], [1, 1, 1, 1], [0, 0, 0, 0]])
    np.testing.assert_allclose(mean_residuals(pred, target), [1.0, 1.0, 0.0])


def test_noise_floor_recovered_on_linear_system():
    # exact linear fit per member; residuals of the mean estimate the noise variance
    rng = np.random.default_rng(0)
    d, v, n = 4, 0.09, 400
    A = rng.normal(size=(d, d)) / 2
    est = AleatoricEstimate()
    for _ in range(300):
        s = rng.normal(size=(n, d))
        s_next = s @ A.T + rng.normal(scale=np.sqrt(v), size=(n, d))
        est = update_sigma(est, mean_residuals(s @ A.T, s_next))
    se = v * np.sqrt(2 / (n * d))
    assert est.sigma2 >= v - 3 * se
    assert est.sigma2 == pytest.approx(v, rel=0.05)
