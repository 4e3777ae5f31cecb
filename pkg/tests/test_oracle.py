import math

import numpy as np
import pytest

from cig import oracle
from cig.kernel import DeviationTensor, KernelMatrix, build_full_covariance_gram, dense_covariance, numerical_rank
from cig.reward import cig_rewards


@pytest.mark.parametrize(
    "check",
    [
        lambda: oracle.verify_logdet_decomposition(50, 20, seed=1),
        lambda: oracle.verify_sylvester(50, seed=1),
        lambda: oracle.verify_rank_bounds(1, seed=1),
        lambda: oracle.verify_propositions(200, seed=1),
        lambda: oracle.verify_gaussian_bound(3, 50_000, seed=1),
        lambda: oracle.verify_kronecker(50, seed=1),
        lambda: oracle.verify_p2e_diagonal(50, seed=1),
    ],
)
def test_checks_pass_on_small_batches(check):
    report = check()
    assert report.passed, report


def test_single_step_reward_is_log_of_ridged_value():
    trace = cig_rewards(KernelMatrix(np.array([[2.0]]), 0.5))
    assert trace.rewards[0] == pytest.approx(math.log(2.5), abs=1e-15)


def test_zero_kernel_gives_t_log_ridge():
    assert cig_rewards(KernelMatrix(np.zeros((6, 6)), 0.3)).total == pytest.approx(6 * math.log(0.3), abs=1e-12)


def test_sylvester_with_no_disagreement():
    full = build_full_covariance_gram(DeviationTensor(np.zeros((3, 4, 2))), 0.7)
    assert full.logdet_sylvester() == pytest.approx(8 * math.log(0.7), abs=1e-12)


def test_sylvester_rank_one_pair_closed_form():
    v = np.random.default_rng(0).normal(size=(5, 3))
    dev = DeviationTensor(np.stack([v, -v]))
    sigma2 = 0.4
    expected = 15 * math.log(sigma2) + math.log1p((v**2).sum() / sigma2)
    assert build_full_covariance_gram(dev, sigma2).logdet_sylvester() == pytest.approx(expected, abs=1e-10)
    assert numerical_rank(dense_covariance(dev)) == 1


def test_single_component_mixture_meets_bound():
    rng = np.random.default_rng(0)
    means = np.array([[0.3, -1.0, 2.0]])
    h, se = oracle._mixture_entropy_mc(rng, means, 0.5, 200_000)
    assert abs(h - oracle.gaussian_entropy_bound(means, 0.5)) <= 3 * se


def test_separated_mixture_adds_log_m():
    rng = np.random.default_rng(1)
    means = np.array([[0.0, 0.0], [50.0, 0.0]])
    h, se = oracle._mixture_entropy_mc(rng, means, 1.0, 200_000)
    component = 0.5 * 2 * math.log(2 * math.pi * math.e)
    assert abs(h - (component + math.log(2))) <= 3 * se


def test_small_mc_budget_is_reported_not_failed():
    report = oracle.verify_gaussian_bound(1, 1000, seed=0)
    assert "below 1e4" in report.note


def test_report_pass_flag():
    bad = oracle.OracleReport("x", 1, 2e-9, 1e-9)
    assert not bad.passed and bad.to_dict()["pass"] is False
    assert oracle.OracleReport("x", 1, 1e-9, 1e-9).passed
