"""Model-based exploration agent driven by intrinsic rewards.

The agent keeps a replay buffer, trains the dynamics ensemble on it, and at
every environment step scores ``N`` random action sequences by the
discounted sum of normalized per-step intrinsic rewards along rollouts
imagined under the ensemble mean. It executes the first action of a
softmax-selected sequence and replans at the next step.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from . import baselines
from .aleatoric import AleatoricEstimate, mean_residuals, ridge_value, update_sigma
from .config import RunConfig
from .ensemble import EnsembleRegressor
from .envs import CoverageRecord, coverage, episode_entropy, make_env
from .kernel import centre, trace_kernel
from .reward import NormalizerState, cig_reward_arrays, no_trace_reward_arrays

__all__ = [
    "DIVERGENCE_LIMIT",
    "ReplayBuffer",
    "ImaginedRollout",
    "RewardBatch",
    "RewardContext",
    "REWARD_FUNCTIONS",
    "imagine",
    "imagine_batch",
    "score_candidates",
    "select_action",
    "Agent",
    "run_exploration",
]

DIVERGENCE_LIMIT = 1e6


class ReplayBuffer:
    """FIFO ring buffer of ``(s, a, s')`` transitions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.insertion_count = 0

    def __len__(self) -> int:
        return min(self.insertion_count, self.capacity)

    def add(self, state, action, next_state) -> None:
        i = self.insertion_count % self.capacity
        self.states[i] = state
        self.actions[i] = action
        self.next_states[i] = next_state
        self.insertion_count += 1

    def ordered(self):
        """All stored transitions, oldest first."""
        n = len(self)
        start = self.insertion_count % self.capacity if self.insertion_count > self.capacity else 0
        idx = (start + np.arange(n)) % self.capacity
        return self.states[idx], self.actions[idx], self.next_states[idx]

    def sample(self, n: int, rng: np.random.Generator):
        """Uniform sample of ``min(n, len)`` distinct transitions."""
        idx = rng.choice(len(self), size=min(n, len(self)), replace=False)
        return self.states[idx], self.actions[idx], self.next_states[idx]


@dataclass(frozen=True)
class ImaginedRollout:
    start_state: np.ndarray
    actions: np.ndarray
    states: np.ndarray  # (T'+1, d)
    member_predictions: np.ndarray  # (M, T', d)
    truncated: bool = False

    @property
    def T(self) -> int:
        return len(self.actions)


def _one_hot(actions, n_actions):
    return np.eye(n_actions)[actions]


def imagine_batch(model: EnsembleRegressor, start, actions, n_actions: int):
    """Propagate ``N`` action sequences ``(N, T)`` from one start state.

    Returns ``(states (N, T+1, d), member_predictions (N, M, T, d),
    diverged_at (N,))`` where ``diverged_at`` is the first step whose mean
    prediction left the ``DIVERGENCE_LIMIT`` ball, or ``T`` if none did.
    Diverged rollouts are frozen at their last finite state.
    """
    actions = np.asarray(actions)
    N, T = actions.shape
    start = np.asarray(start, dtype=np.float64)
    d = start.shape[-1]
    M = model.n_members
    onehot = _one_hot(actions, n_actions)
    states = np.empty((N, T + 1, d))
    states[:, 0] = start
    preds = np.empty((N, M, T, d))
    diverged_at = np.full(N, T)
    s = states[:, 0]
    for t in range(T):
        out = model._members(np.concatenate([s, onehot[:, t]], axis=1))
        preds[:, :, t] = np.swapaxes(out, 0, 1)
        nxt = out.mean(axis=0)
        bad = ~(np.abs(nxt) <= DIVERGENCE_LIMIT).all(axis=1)
        if bad.any():
            fresh = bad & (diverged_at == T)
            diverged_at[fresh] = t
            nxt[bad] = s[bad]
            preds[bad, :, t] = s[bad][:, None, :]
        states[:, t + 1] = nxt
        s = nxt
    return states, preds, diverged_at


def imagine(model: EnsembleRegressor, start, actions, n_actions: int) -> ImaginedRollout:
    """Single rollout under the ensemble mean; truncated at divergence."""
    actions = np.asarray(actions)
    if actions.ndim != 1 or len(actions) < 1:
        raise ValueError("imagine needs a 1-D action sequence with T >= 1")
    states, preds, diverged_at = imagine_batch(model, start, actions[None], n_actions)
    cut = int(diverged_at[0])
    return ImaginedRollout(
        start_state=np.asarray(start, dtype=np.float64),
        actions=actions[:cut],
        states=states[0, : cut + 1],
        member_predictions=preds[0, :, :cut],
        truncated=cut < len(actions),
    )


# -- reward plumbing ---------------------------------------------------------------


@dataclass(frozen=True)
class RewardBatch:
    """Raw per-step rewards of ``N`` rollouts plus kernel diagnostics."""

    raw: np.ndarray  # (N, T)
    lifelong: np.ndarray  # (N, T), K_tt
    prefix_explained: np.ndarray | None = None  # (N, T), CIG only


@dataclass
class RewardContext:
    """Method-specific state the reward functions read."""

    sigma: AleatoricEstimate = field(default_factory=AleatoricEstimate)
    ridge_multiplier: float = 1.0
    e3b_lambda: float = baselines.E3B_LAMBDA
    apt_k: int = baselines.APT_K
    particles: np.ndarray | None = None
    rnd: baselines.RandomNetworkDistillation | None = None

    def ridge(self, d: int) -> float:
        return ridge_value(self.sigma, d, self.ridge_multiplier)


def _kernel_parts(preds):
    deltas = centre(preds)
    return deltas, trace_kernel(deltas)


def _lifelong(K):
    return np.diagonal(K, axis1=-2, axis2=-1).copy()


def _cig(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    rewards, lifelong, explained = cig_reward_arrays(K, ctx.ridge(preds.shape[-1]))
    return RewardBatch(rewards, lifelong, explained)


def _cig_no_prefix(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    lifelong = _lifelong(K)
    return RewardBatch(np.log(lifelong + ctx.ridge(preds.shape[-1])), lifelong)


def _cig_lifelong_only(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    lifelong = _lifelong(K)
    return RewardBatch(np.log(np.maximum(lifelong, np.finfo(float).tiny)), lifelong)


def _cig_no_trace(ctx, preds, next_states):
    deltas, K = _kernel_parts(preds)
    M, d = preds.shape[-3], preds.shape[-1]
    step_grams = np.einsum("...atj,...btj->...tab", deltas, deltas) / M
    sigma2 = ctx.ridge(d) / d
    return RewardBatch(no_trace_reward_arrays(np.cumsum(step_grams, axis=-3), sigma2), _lifelong(K))


def _p2e(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    lifelong = _lifelong(K)
    return RewardBatch(lifelong / preds.shape[-1], lifelong)


def _e3b(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    return RewardBatch(baselines.e3b_rollout_rewards(next_states, ctx.e3b_lambda), _lifelong(K))


def _e3b_x_p2e(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    lifelong = _lifelong(K)
    bonus = baselines.e3b_rollout_rewards(next_states, ctx.e3b_lambda)
    return RewardBatch(baselines.e3b_x_p2e_reward(bonus, lifelong / preds.shape[-1]), lifelong)


def _apt(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    return RewardBatch(baselines.apt_reward_against(next_states, ctx.particles, ctx.apt_k), _lifelong(K))


def _rnd_like(ctx, preds, next_states):
    _, K = _kernel_parts(preds)
    return RewardBatch(ctx.rnd.reward(next_states), _lifelong(K))


REWARD_FUNCTIONS = {
    "cig": _cig,
    "cig_no_prefix": _cig_no_prefix,
    "cig_lifelong_only": _cig_lifelong_only,
    "cig_no_trace": _cig_no_trace,
    "p2e": _p2e,
    "e3b": _e3b,
    "e3b_x_p2e": _e3b_x_p2e,
    "apt": _apt,
    "rnd_like": _rnd_like,
}


def score_candidates(normalized: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted sums ``sum_t gamma^t r_t`` over the last axis."""
    T = normalized.shape[-1]
    return normalized @ (gamma ** np.arange(T))


def select_action(scores, first_actions, temperature: float, rng: np.random.Generator):
    """Pick a candidate by softmax over ``scores / temperature``.

    ``temperature == 0`` takes the argmax, breaking ties toward the lowest
    candidate index. Returns ``(action, candidate_index)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) < 1:
        raise ValueError("select_action needs at least one candidate score")
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if temperature == 0 or not np.isfinite(scores).any():
        idx = int(np.argmax(scores))
    else:
        p = softmax(np.where(np.isfinite(scores), scores, -np.inf) / temperature)
        idx = int(rng.choice(len(scores), p=p))
    return int(first_actions[idx]), idx


# -- agent ---------------------------------------------------------------------------


class Agent:
    """One run's model, buffer, reward state and planner."""

    def __init__(self, config: RunConfig, obs_dim: int, n_actions: int, rng: np.random.Generator):
        self.config = config
        self.n_actions = n_actions
        self.obs_dim = obs_dim
        self.rng = rng
        seeds = rng.integers(0, 2**31 - 1, size=2)
        ens = config.ensemble
        self.model = EnsembleRegressor(
            n_members=ens.members,
            hidden=ens.width,
            learning_rate=ens.lr,
            optimizer=ens.optimizer,
            momentum=ens.momentum,
            batch_size=config.batch_size,
            random_state=int(seeds[0]),
        )
        self.model._initialize(obs_dim + n_actions, obs_dim)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, n_actions)
        rc = config.reward
        self.ctx = RewardContext(
            sigma=AleatoricEstimate(beta=rc.beta_sigma),
            ridge_multiplier=rc.ridge_multiplier,
            e3b_lambda=rc.e3b_lambda,
            apt_k=rc.apt_k,
        )
        if config.method == "rnd_like":
            self.ctx.rnd = baselines.RandomNetworkDistillation(
                obs_dim, learning_rate=rc.rnd_lr, seed=int(seeds[1])
            )
        self.reward_fn = REWARD_FUNCTIONS[config.method]
        self.normalizer = NormalizerState(momentum=rc.norm_momentum)
        self._pending = []

    def observe(self, state, action, next_state):
        self.buffer.add(state, _one_hot(action, self.n_actions), next_state)

    def train(self):
        """``updates_per_train`` ensemble steps, then sigma, normalizer and baseline state."""
        cfg = self.config
        for _ in range(cfg.updates_per_train):
            s, a, s_next = self.buffer.sample(cfg.batch_size, self.rng)
            X = np.concatenate([s, a], axis=1)
            self.model.partial_fit(X, s_next)
            if self.ctx.rnd is not None:
                self.ctx.rnd.update(s_next)
        mean = self.model._members(X).mean(axis=0)
        self.ctx.sigma = update_sigma(self.ctx.sigma, mean_residuals(mean, s_next))
        if self._pending:
            self.normalizer = self.normalizer.update(np.concatenate(self._pending))
            self._pending = []
        if cfg.method == "apt":
            self.refresh_particles()

    def refresh_particles(self):
        n = self.config.reward.apt_particles
        self.ctx.particles = self.buffer.sample(n, self.rng)[2]

    def plan(self, state):
        """Score candidates from ``state``; returns ``(action, info)``."""
        pc = self.config.planner
        actions = self.rng.integers(0, self.n_actions, size=(pc.n_candidates, pc.horizon))
        states, preds, diverged_at = imagine_batch(self.model, state, actions, self.n_actions)
        batch = self.reward_fn(self.ctx, preds, states[:, 1:])
        raw = batch.raw
        if not self.normalizer.initialized:
            self.normalizer = self.normalizer.update(raw.ravel())
        else:
            self._pending.append(raw.ravel())
        scores = score_candidates(self.normalizer.apply(raw), pc.gamma)
        scores[diverged_at < pc.horizon] = -np.inf
        action, idx = select_action(scores, actions[:, 0], pc.temperature, self.rng)
        info = {
            "reward": float(raw[idx].mean()),
            "lifelong": float(batch.lifelong[idx].mean()),
            "explained": None,
            "diverged": int((diverged_at < pc.horizon).sum()),
        }
        if batch.prefix_explained is not None:
            lif = batch.lifelong[idx]
            frac = np.divide(batch.prefix_explained[idx], lif, out=np.zeros_like(lif), where=lif > 0)
            info["explained"] = float(frac.mean())
        return action, info


def _nanmean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else float("nan")


def run_exploration(config: RunConfig):
    """Run one exploration experiment, yielding event dicts.

    Events are ``{"event": "log", ...}`` rows every ``log_every`` env steps
    (the CSV summary rows) and one final ``{"event": "summary", ...}``.
    With ``stop_at_coverage`` set, the run ends early once coverage reaches
    it; the last log row then falls on the stopping step.
    """
    root = np.random.SeedSequence([config.seed, config.env.seed])
    env_seed, agent_seed, prefill_seed = root.spawn(3)
    env = make_env(dataclasses.replace(config.env, seed=int(env_seed.generate_state(1)[0])))
    agent = Agent(config, env.obs_dim, env.n_actions, np.random.default_rng(agent_seed))
    prefill_rng = np.random.default_rng(prefill_seed)

    record = CoverageRecord(env.total_reachable, {env.position})
    state = env.reset()
    counts = {env.position: 1}
    last_entropy = None
    window = []
    steps_to_90 = None
    goal_step = None
    diverged = 0
    stop = config.stop_at_coverage

    for step in range(1, config.budget_steps + 1):
        if step <= config.prefill_steps:
            action, info = int(prefill_rng.integers(env.n_actions)), None
        else:
            action, info = agent.plan(state.features)
            diverged += info["diverged"]
            window.append(info)
        next_state, done = env.step(action)
        agent.observe(state.features, action, next_state.features)
        record.add(next_state.position)
        record.env_steps = step
        counts[next_state.position] = counts.get(next_state.position, 0) + 1
        if goal_step is None and next_state.position in env.goal_cells:
            goal_step = step
        if steps_to_90 is None and coverage(record) >= 0.9:
            steps_to_90 = step
        state = next_state
        if done:
            last_entropy = episode_entropy(counts)
            state = env.reset()
            counts = {env.position: 1}
        if step % config.train_every == 0 and len(agent.buffer) >= config.batch_size:
            agent.train()
        stopping = stop is not None and coverage(record) >= stop
        if step % config.log_every == 0 or step == config.budget_steps or stopping:
            yield {
                "event": "log",
                "run_id": config.run_id,
                "method": config.method,
                "env": config.env_name,
                "seed": config.seed,
                "env_steps": step,
                "coverage": coverage(record),
                "mean_reward": _nanmean([w["reward"] for w in window]),
                "sigma2": agent.ctx.sigma.sigma2,
                "mean_lifelong": _nanmean([w["lifelong"] for w in window]),
                "mean_prefix_explained": _nanmean([w["explained"] for w in window]),
                "episode_entropy": episode_entropy(counts) if last_entropy is None else last_entropy,
            }
            window = []
        if stopping:
            break
    yield {
        "event": "summary",
        "run_id": config.run_id,
        "env_steps": step,
        "coverage": coverage(record),
        "visited": len(record.visited),
        "total_reachable": record.total_reachable,
        "steps_to_90": steps_to_90,
        "goal_first_visit": goal_step,
        "diverged_candidates": diverged,
        "ensemble_updates": agent.model.step_count_,
    }
