"""Small vector-observation exploration environments.

All environments are grids of free cells with deterministic moves. The
observation encodes the agent's cell (``encoding="onehot"`` over reachable
cells, or ``"coords"`` scaled to ``[-1, 1]``) followed by
``distractor_dims`` distractor features. Coordinates make the dynamics
translation-invariant, so a trained model predicts unvisited cells
confidently; the one-hot code leaves them unlearned. With ``noisy_tv`` enabled the
last action (the trigger) leaves the agent in place and resamples the
distractors uniformly in ``[-1, 1]``; in the clean variant the trigger is a
no-op and the distractors stay at zero, so both variants share observation
and action spaces.

Kinds
-----
``gridworld``
    ``rooms`` square rooms of side ``size`` in a row, joined by one-cell
    doorways in the middle row. Actions: up, down, left, right, trigger.
``corridor``
    A ``width`` x ``size`` strip entered at one end. Many lane-changing
    paths reach each cell. Actions as for ``gridworld``.
``chain``
    ``size`` cells in a line. Actions: left, right, trigger.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EnvConfig",
    "EnvState",
    "GridEnv",
    "CoverageRecord",
    "make_env",
    "coverage",
    "episode_entropy",
    "bfs_reachable",
]

KINDS = ("gridworld", "corridor", "chain")
DEFAULT_HORIZON = {"gridworld": 100, "corridor": 100, "chain": 50}

_MOVES_2D = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right as (dx, dy)
_MOVES_1D = ((-1, 0), (1, 0))


@dataclass(frozen=True)
class EnvConfig:
    """Environment block of an experiment file."""

    kind: str = "corridor"
    size: int = 40
    horizon: int | None = None
    noisy_tv: bool = False
    distractor_dims: int = 4
    seed: int = 0
    width: int = 3
    rooms: int = 3
    encoding: str = "onehot"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"env.kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("size", "width", "rooms"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"env.{name} must be >= 1, got {getattr(self, name)}")
        if self.encoding not in ("onehot", "coords"):
            raise ValueError(f"env.encoding must be 'onehot' or 'coords', got {self.encoding!r}")
        if self.distractor_dims < 0:
            raise ValueError(f"env.distractor_dims must be >= 0, got {self.distractor_dims}")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError(f"env.horizon must be >= 1, got {self.horizon}")

    @property
    def episode_horizon(self) -> int:
        return DEFAULT_HORIZON[self.kind] if self.horizon is None else self.horizon


@dataclass(frozen=True)
class EnvState:
    """Observation and bookkeeping after a reset or step."""

    features: np.ndarray
    position: tuple
    step_in_episode: int


@dataclass
class CoverageRecord:
    """Distinct cells visited over a run."""

    total_reachable: int
    visited: set = field(default_factory=set)
    env_steps: int = 0

    def add(self, cell) -> None:
        self.visited.add(cell)
        if len(self.visited) > self.total_reachable:
            raise RuntimeError("visited more cells than are reachable")


def coverage(record: CoverageRecord) -> float:
    if record.total_reachable <= 0:
        raise ValueError("total_reachable must be > 0")
    return len(record.visited) / record.total_reachable


def episode_entropy(visit_counts) -> float:
    """Shannon entropy (nats) of a visit-count histogram."""
    counts = np.asarray(list(visit_counts.values()) if isinstance(visit_counts, dict) else visit_counts,
                        dtype=np.float64)
    total = counts.sum()
    if not total >= 1:
        raise ValueError("episode_entropy needs at least one visit")
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def bfs_reachable(free: np.ndarray, start, moves) -> set:
    """Cells reachable from ``start`` on the boolean grid ``free[y, x]``."""
    h, w = free.shape
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in moves:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and free[ny, nx] and (nx, ny) not in seen:
                seen.add((nx, ny))
                queue.append((nx, ny))
    return seen


def _layout(cfg: EnvConfig):
    if cfg.kind == "chain":
        return np.ones((1, cfg.size), dtype=bool), (0, 0), _MOVES_1D
    if cfg.kind == "corridor":
        return np.ones((cfg.width, cfg.size), dtype=bool), (0, cfg.width // 2), _MOVES_2D
    s = cfg.size
    free = np.ones((s, cfg.rooms * s + cfg.rooms - 1), dtype=bool)
    for r in range(1, cfg.rooms):
        wall = r * (s + 1) - 1
        free[:, wall] = False
        free[s // 2, wall] = True
    return free, (0, 0), _MOVES_2D


class GridEnv:
    """Deterministic grid navigation with an optional noisy-TV trigger.

    ``step`` truncates at the horizon; there is no early termination.
    Call :meth:`reset` to begin the next episode.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.free, self.start, self._moves = _layout(config)
        self.height, self.width = self.free.shape
        self.reachable = bfs_reachable(self.free, self.start, self._moves)
        self.n_actions = len(self._moves) + 1
        self.trigger = self.n_actions - 1
        self.horizon = config.episode_horizon
        self._cell_index = {c: i for i, c in enumerate(sorted(self.reachable, key=lambda c: (c[1], c[0])))}
        if config.encoding == "onehot":
            self.pos_dims = len(self._cell_index)
        else:
            self.pos_dims = 1 if self.height == 1 else 2
        self.obs_dim = self.pos_dims + config.distractor_dims
        self._scale = np.array([max(self.width - 1, 1), max(self.height - 1, 1)], dtype=np.float64)
        self.rng = np.random.default_rng(config.seed)
        self.goal_cells = self._goal_cells()
        self.reset()

    def _goal_cells(self):
        if self.config.kind != "gridworld" or self.config.rooms < 2:
            return frozenset()
        left = (self.config.rooms - 1) * (self.config.size + 1)
        return frozenset(c for c in self.reachable if c[0] >= left)

    @property
    def total_reachable(self) -> int:
        return len(self.reachable)

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def features(self, position=None) -> np.ndarray:
        cell = self.position if position is None else position
        if self.config.encoding == "onehot":
            code = np.zeros(self.pos_dims)
            code[self._cell_index[cell]] = 1.0
        else:
            code = (2.0 * np.array(cell, dtype=np.float64) / self._scale - 1.0)[: self.pos_dims]
        return np.concatenate([code, self.distractor])

    def _state(self) -> EnvState:
        return EnvState(self.features(), self.position, self.t)

    def reset(self) -> EnvState:
        self.position = self.start
        self.distractor = np.zeros(self.config.distractor_dims)
        self.t = 0
        return self._state()

    def step(self, action: int):
        """Apply ``action``; returns ``(state, done)`` with ``done`` at the horizon."""
        if not (isinstance(action, (int, np.integer)) and 0 <= action < self.n_actions):
            raise ValueError(f"invalid action {action!r}; expected an integer in [0, {self.n_actions})")
        if self.t >= self.horizon:
            raise RuntimeError("episode is over; call reset()")
        if action == self.trigger:
            if self.config.noisy_tv:
                self.distractor = self.rng.uniform(-1.0, 1.0, size=self.config.distractor_dims)
        else:
            dx, dy = self._moves[action]
            x, y = self.position[0] + dx, self.position[1] + dy
            if 0 <= x < self.width and 0 <= y < self.height and self.free[y, x]:
                self.position = (x, y)
        self.t += 1
        return self._state(), self.t >= self.horizon


def make_env(config: EnvConfig | dict) -> GridEnv:
    if isinstance(config, dict):
        config = EnvConfig(**config)
    return GridEnv(config)
