"""Experiment configuration: typed blocks and a strict TOML loader.

File grammar (TOML)::

    [experiment]
    name = "corridor-redundancy"
    methods = ["cig", "p2e"]          # matrix axis
    seeds = [0, 1, 2, 3, 4]           # matrix axis
    budget_steps = 20000              # total env steps per run, prefill included
    prefill_steps = 500
    train_every = 10
    updates_per_train = 5
    batch_size = 64
    buffer_capacity = 100000
    log_every = 500
    stop_at_coverage = 1.0            # optional: end a run once coverage reaches this
    workers = 1

    [[env]]                           # one table per environment (matrix axis);
    name = "corridor"                 # a single [env] table is also accepted
    kind = "corridor"
    size = 40

    [ensemble]
    members = 5
    width = 64
    lr = 0.001

    [reward]
    ridge_multiplier = 1.0

    [planner]
    horizon = 15

    [overrides.cig_no_trace.ensemble] # per-method block overrides
    members = 2

Every table and key is checked; anything unrecognised is an error.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field

from .envs import EnvConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "METHODS",
    "ConfigError",
    "EnsembleConfig",
    "RewardConfig",
    "PlannerConfig",
    "RunConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
]

METHODS = (
    "cig",
    "cig_no_prefix",
    "cig_lifelong_only",
    "cig_no_trace",
    "p2e",
    "e3b",
    "e3b_x_p2e",
    "apt",
    "rnd_like",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 5
    width: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9

    def __post_init__(self):
        if self.members < 2:
            raise ConfigError(f"ensemble.members must be >= 2, got {self.members}")
        if self.width < 1:
            raise ConfigError(f"ensemble.width must be >= 1, got {self.width}")
        if not self.lr > 0:
            raise ConfigError(f"ensemble.lr must be > 0, got {self.lr}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"ensemble.optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass(frozen=True)
class RewardConfig:
    ridge_multiplier: float = 1.0
    beta_sigma: float = 0.99
    norm_momentum: float = 0.99
    e3b_lambda: float = 0.1
    apt_k: int = 12
    apt_particles: int = 256
    rnd_lr: float = 1e-3

    def __post_init__(self):
        if not self.ridge_multiplier > 0:
            raise ConfigError(f"reward.ridge_multiplier must be > 0, got {self.ridge_multiplier}")
        for name in ("beta_sigma", "norm_momentum"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError(f"reward.{name} must be in [0, 1), got {value}")
        if not self.e3b_lambda > 0:
            raise ConfigError(f"reward.e3b_lambda must be > 0, got {self.e3b_lambda}")
        if self.apt_k < 1 or self.apt_particles < self.apt_k:
            raise ConfigError(
                f"reward.apt_k must be >= 1 and <= apt_particles, got {self.apt_k}, {self.apt_particles}"
            )


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 15
    n_candidates: int = 64
    temperature: float = 0.5
    gamma: float = 0.99

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"planner.horizon must be >= 1, got {self.horizon}")
        if self.n_candidates < 1:
            raise ConfigError(f"planner.n_candidates must be >= 1, got {self.n_candidates}")
        if self.temperature < 0:
            raise ConfigError(f"planner.temperature must be >= 0, got {self.temperature}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"planner.gamma must be in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class RunConfig:
    """Everything one (method, env, seed) run needs."""

    method: str = "cig"
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    env_name: str = "env"
    budget_steps: int = 20000
    prefill_steps: int = 500
    train_every: int = 10
    updates_per_train: int = 5
    batch_size: int = 64
    buffer_capacity: int = 100_000
    log_every: int = 500
    stop_at_coverage: float | None = None
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.prefill_steps < 1:
            raise ConfigError(f"experiment.prefill_steps must be >= 1, got {self.prefill_steps}")
        if self.budget_steps < self.prefill_steps:
            raise ConfigError(
                f"experiment.budget_steps ({self.budget_steps}) must be >= prefill_steps ({self.prefill_steps})"
            )
        for name in ("train_every", "updates_per_train", "batch_size", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"experiment.{name} must be >= 1, got {getattr(self, name)}")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("experiment.buffer_capacity must be >= batch_size")
        if self.stop_at_coverage is not None and not 0 < self.stop_at_coverage <= 1:
            raise ConfigError(f"experiment.stop_at_coverage must be in (0, 1], got {self.stop_at_coverage}")

    @property
    def run_id(self) -> str:
        return f"{self.method}__{self.env_name}__seed{self.seed}"


_RUN_KEYS = (
    "budget_steps",
    "prefill_steps",
    "train_every",
    "updates_per_train",
    "batch_size",
    "buffer_capacity",
    "log_every",
    "stop_at_coverage",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """A method x env x seed matrix."""

    name: str
    methods: tuple
    seeds: tuple
    envs: tuple  # of (name, EnvConfig)
    run_settings: dict
    ensemble: EnsembleConfig
    reward: RewardConfig
    planner: PlannerConfig
    overrides: dict
    workers: int = 1

    def runs(self):
        """Expand the matrix in (method, env, seed) order."""
        out = []
        for method in self.methods:
            blocks = {"ensemble": self.ensemble, "reward": self.reward, "planner": self.planner}
            for block, values in self.overrides.get(method, {}).items():
                blocks[block] = dataclasses.replace(blocks[block], **values)
            for env_name, env in self.envs:
                for seed in self.seeds:
                    out.append(
                        RunConfig(
                            method=method,
                            seed=seed,
                            env=env,
                            env_name=env_name,
                            **self.run_settings,
                            **blocks,
                        )
                    )
        return out


def _check_keys(table: dict, allowed, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{where} must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _field_names(cls):
    return [f.name for f in dataclasses.fields(cls)]


def _build(cls, table: dict, where: str):
    _check_keys(table, _field_names(cls), where)
    try:
        return cls(**table)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded TOML document."""
    _check_keys(data, ("experiment", "env", "ensemble", "reward", "planner", "overrides"), "config")
    exp = data.get("experiment", {})
    _check_keys(exp, ("name", "methods", "seeds", "workers", *_RUN_KEYS), "[experiment]")
    methods = tuple(exp.get("methods", ["cig"]))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"experiment.methods: unknown method {m!r}; expected one of {METHODS}")
    if not methods:
        raise ConfigError("experiment.methods must not be empty")
    seeds = tuple(exp.get("seeds", [0]))
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("experiment.seeds must be a non-empty list of integers")
    workers = exp.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"experiment.workers must be an integer >= 1, got {workers!r}")

    raw_envs = data.get("env", [{}])
    if isinstance(raw_envs, dict):
        raw_envs = [raw_envs]
    envs = []
    for i, table in enumerate(raw_envs):
        table = dict(table)
        name = table.pop("name", table.get("kind", "corridor") + ("_noisy" if table.get("noisy_tv") else ""))
        envs.append((name, _build(EnvConfig, table, f"[env] #{i}")))
    names = [n for n, _ in envs]
    if len(set(names)) != len(names):
        raise ConfigError(f"env names must be unique, got {names}")

    ensemble = _build(EnsembleConfig, data.get("ensemble", {}), "[ensemble]")
    reward = _build(RewardConfig, data.get("reward", {}), "[reward]")
    planner = _build(PlannerConfig, data.get("planner", {}), "[planner]")
    blocks = {"ensemble": EnsembleConfig, "reward": RewardConfig, "planner": PlannerConfig}
    overrides = {}
    raw_over = data.get("overrides", {})
    _check_keys(raw_over, METHODS, "[overrides]")
    for method, tables in raw_over.items():
        _check_keys(tables, blocks, f"[overrides.{method}]")
        for block, values in tables.items():
            _check_keys(values, _field_names(blocks[block]), f"[overrides.{method}.{block}]")
        overrides[method] = tables

    settings = {k: exp[k] for k in _RUN_KEYS if k in exp}
    config = ExperimentConfig(
        name=exp.get("name", "experiment"),
        methods=methods,
        seeds=seeds,
        envs=tuple(envs),
        run_settings=settings,
        ensemble=ensemble,
        reward=reward,
        planner=planner,
        overrides=overrides,
        workers=workers,
    )
    try:
        config.runs()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
