import hashlib

import numpy as np
import pytest

from cig.baselines import (
    EllipticalState,
    RandomNetworkDistillation,
    apt_reward,
    apt_reward_against,
    e3b_reward,
    e3b_rollout_rewards,
    e3b_x_p2e_reward,
    p2e_reward,
)
from cig.kernel import build_kernel, compute_deviations
from cig.reward import cig_rewards


def random_dev(rng, M=4, T=7, d=3):
    return compute_deviations(rng.normal(size=(M, T, d)))


class TestP2E:
    def test_zero_deviations(self):
        dev = compute_deviations(np.ones((3, 5, 2)))
        assert np.array_equal(p2e_reward(dev), np.zeros(5))

    @pytest.mark.parametrize("seed", range(5))
    def test_diagonal_link(self, seed):
        dev = random_dev(np.random.default_rng(seed))
        kernel = build_kernel(dev, 0.3)
        np.testing.assert_allclose(p2e_reward(dev) * dev.d, np.diag(kernel.K), rtol=0, atol=1e-12)
        assert np.array_equal(p2e_reward(dev), cig_rewards(kernel).lifelong / dev.d)

    def test_variance_convention(self):
        rng = np.random.default_rng(1)
        preds = rng.normal(size=(5, 6, 3))
        expected = preds.var(axis=0).mean(axis=-1)
        np.testing.assert_allclose(p2e_reward(compute_deviations(preds)), expected, atol=1e-12)

    def test_two_member_closed_form(self):
        u = np.array([0.3, -1.2, 2.0])
        preds = np.stack([u, -u])[:, None, :]
        assert p2e_reward(compute_deviations(preds))[0] == pytest.approx(u @ u / 3, abs=1e-15)


class TestE3B:
    def test_harmonic_decay_on_repeats(self):
        state = EllipticalState.fresh(4, lambda_ridge=1.0)
        phi = np.array([0.0, 3.0, 0.0, 0.0])
        got = []
        for _ in range(3):
            bonus, state = e3b_reward(state, phi)
            got.append(bonus)
        np.testing.assert_allclose(got, [1.0, 0.5, 1.0 / 3.0], atol=1e-15)

    def test_orthonormal_sequence_undiscounted(self):
        state = EllipticalState.fresh(5, lambda_ridge=1.0)
        for i in range(5):
            bonus, state = e3b_reward(state, np.eye(5)[i])
            assert bonus == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_inverse(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(8, 8))
        C = A @ A.T + 0.5 * np.eye(8)
        state = EllipticalState(np.linalg.inv(C), 0.1)
        phi = rng.normal(size=8)
        _, new = e3b_reward(state, phi)
        phi = phi / np.linalg.norm(phi)
        np.testing.assert_allclose(new.inv_cov, np.linalg.inv(C + np.outer(phi, phi)), atol=1e-9)

    def test_trace_strictly_decreases_and_stays_pd(self):
        rng = np.random.default_rng(2)
        state = EllipticalState.fresh(6)
        trace = np.trace(state.inv_cov)
        for _ in range(40):
            _, state = e3b_reward(state, rng.normal(size=6))
            new_trace = np.trace(state.inv_cov)
            assert new_trace < trace
            trace = new_trace
            assert np.linalg.eigvalsh(state.inv_cov).min() > 0

    def test_reset_restores_fresh_bonus(self):
        phi = np.array([1.0, 2.0, 2.0])
        state = EllipticalState.fresh(3)
        first, state = e3b_reward(state, phi)
        second, state = e3b_reward(state, phi)
        assert second < first
        again, _ = e3b_reward(state.reset(), phi)
        assert again == first

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            e3b_reward(EllipticalState.fresh(2), [np.nan, 1.0])

    def test_batched_rollouts_match_sequential(self):
        rng = np.random.default_rng(3)
        emb = rng.normal(size=(4, 6, 5))
        batched = e3b_rollout_rewards(emb, 0.1)
        for n in range(4):
            state = EllipticalState.fresh(5, 0.1)
            for t in range(6):
                bonus, state = e3b_reward(state, emb[n, t])
                assert batched[n, t] == pytest.approx(bonus, rel=1e-12)

    def test_product(self):
        assert e3b_x_p2e_reward(0.0, 5.0) == 0.0
        assert e3b_x_p2e_reward(1.0, 5.0) == 5.0
        assert e3b_x_p2e_reward(2.0, 3.0) == 6.0
        with pytest.raises(ValueError):
            e3b_x_p2e_reward(-1.0, 1.0)


class TestAPT:
    def test_identical_points(self):
        assert np.array_equal(apt_reward(np.ones((6, 3)), k=3), np.zeros(6))

    def test_two_points(self):
        h = np.array([[0.0, 0.0], [3.0, 4.0]])
        np.testing.assert_allclose(apt_reward(h, k=1), [np.log(6.0)] * 2, atol=1e-15)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        h = rng.normal(size=(16, 5))
        D = np.sqrt(((h[:, None, :] - h[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(D, np.inf)
        expected = np.log1p(np.sort(D, axis=1)[:, :3].mean(axis=1))
        np.testing.assert_allclose(apt_reward(h, k=3), expected, rtol=0, atol=1e-12)

    def test_batch_too_small(self):
        with pytest.raises(ValueError, match="B > k"):
            apt_reward(np.ones((3, 2)), k=3)

    def test_against_reference(self):
        rng = np.random.default_rng(5)
        ref = rng.normal(size=(30, 4))
        q = rng.normal(size=(2, 3, 4))
        out = apt_reward_against(q, ref, k=4)
        assert out.shape == (2, 3)
        D = np.sqrt(((q[..., None, :] - ref) ** 2).sum(-1))
        np.testing.assert_allclose(out, np.log1p(np.sort(D, axis=-1)[..., :4].mean(-1)), atol=1e-12)


class TestRND:
    def test_untrained_positive(self):
        rnd = RandomNetworkDistillation(5, seed=3)
        assert np.all(rnd.reward(np.random.default_rng(0).normal(size=(10, 5))) > 0)

    def test_target_frozen(self):
        rnd = RandomNetworkDistillation(3, seed=1)
        digest = hashlib.sha256(b"".join(p.tobytes() for p in rnd.target)).hexdigest()
        rng = np.random.default_rng(1)
        for _ in range(1000):
            rnd.update(rng.normal(size=(8, 3)))
        assert hashlib.sha256(b"".join(p.tobytes() for p in rnd.target)).hexdigest() == digest

    def test_trained_point_is_not_novel(self):
        rnd = RandomNetworkDistillation(3, seed=2, learning_rate=3e-3)
        s_star = np.array([[0.2, -0.4, 0.1]])
        for _ in range(3000):
            rnd.update(s_star)
        s_far = np.array([[4.0, 5.0, -6.0]])
        assert rnd.reward(s_star)[0] < 1e-3 * rnd.reward(s_far)[0]
