"""Ensemble of one-step dynamics predictors.

Members share the architecture and the training batches and differ only in
their initialization seed. The estimator follows the scikit-learn contract
(``fit``/``partial_fit``/``predict``, ``get_params``) with inputs
``X = [state, action]`` and targets ``y = next_state``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _mlp

__all__ = [
    "EnsembleRegressor",
    "TransitionBatch",
    "predict_all",
    "train_step",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"CIGENS01"


@dataclass(frozen=True)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        actions = np.asarray(self.actions, dtype=np.float64).reshape(len(states), -1)
        next_states = np.atleast_2d(np.asarray(self.next_states, dtype=np.float64))
        if len(states) < 1 or len(states) != len(next_states):
            raise ValueError(
                f"batch needs B >= 1 matching rows, got {len(states)} states, "
                f"{len(actions)} actions, {len(next_states)} next states"
            )
        for name, arr in (("states", states), ("actions", actions), ("next_states", next_states)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            object.__setattr__(self, name, arr)

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.states, self.actions], axis=1)


class EnsembleRegressor(RegressorMixin, BaseEstimator):
    """M independently initialized MLPs trained on the same data.

    Parameters
    ----------
    n_members : int, default=5
        Ensemble size ``M`` (at least 2).
    hidden : int, default=64
        Width of each hidden layer.
    n_hidden_layers : int, default=2
    learning_rate : float, default=1e-3
    optimizer : {"sgd", "adam"}, default="sgd"
        ``"sgd"`` uses heavy-ball momentum ``momentum``; for ``"adam"`` the
        same value is the first-moment decay.
    momentum : float, default=0.9
    residual : bool, default=True
        Predict ``y = X[:, :n_outputs] + f(X)``, i.e. the network models the
        state increment. Requires the state to lead the input columns.
    batch_size : int, default=64
        Minibatch size used by :meth:`fit`.
    max_iter : int, default=200
        Epochs run by :meth:`fit`.
    random_state : int, RandomState instance or None
        Seeds the member initializations and minibatch order.
    """

    def __init__(
        self,
        n_members=5,
        hidden=64,
        n_hidden_layers=2,
        learning_rate=1e-3,
        optimizer="sgd",
        momentum=0.9,
        residual=True,
        batch_size=64,
        max_iter=200,
        random_state=None,
    ):
        self.n_members = n_members
        self.hidden = hidden
        self.n_hidden_layers = n_hidden_layers
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.momentum = momentum
        self.residual = residual
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.random_state = random_state

    # -- construction -----------------------------------------------------

    def _initialize(self, n_features, n_outputs):
        if self.n_members < 2:
            raise ValueError(f"an ensemble needs n_members >= 2, got {self.n_members}")
        if self.residual and n_outputs > n_features:
            raise ValueError(
                f"residual prediction needs n_outputs <= n_features, got {n_outputs} > {n_features}"
            )
        rng = check_random_state(self.random_state)
        base = int(rng.randint(0, 2**31 - 1 - self.n_members))
        self.seeds_ = [base + k for k in range(self.n_members)]
        self.n_features_in_ = n_features
        self.n_outputs_ = n_outputs
        sizes = [n_features] + [self.hidden] * self.n_hidden_layers + [n_outputs]
        self.params_ = _mlp.init_params(sizes, self.seeds_)
        self._optimizer = _mlp.Optimizer(self.optimizer, self.momentum)
        self._rng = rng
        self.step_count_ = 0
        self.loss_ = np.full(self.n_members, np.nan)

    def _offset(self, X):
        return X[:, : self.n_outputs_] if self.residual else None

    # -- training ---------------------------------------------------------

    def loss_and_grads(self, X, y):
        """Per-member MSE on ``(X, y)`` and the analytic gradients."""
        return _mlp.mse_loss_and_grads(self.params_, X, y, self._offset(X))

    def partial_fit(self, X, y, learning_rate=None):
        """One gradient step of every member on the shared batch."""
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        if not hasattr(self, "params_"):
            self._initialize(X.shape[1], y.shape[1])
        elif X.shape[1] != self.n_features_in_ or y.shape[1] != self.n_outputs_:
            raise ValueError(
                f"expected {self.n_features_in_} features and {self.n_outputs_} outputs, "
                f"got {X.shape[1]} and {y.shape[1]}"
            )
        lr = self.learning_rate if learning_rate is None else learning_rate
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        losses, grads = self.loss_and_grads(X, y)
        if not np.all(np.isfinite(losses)):
            bad = int(np.flatnonzero(~np.isfinite(losses))[0])
            raise FloatingPointError(
                f"training halted: non-finite loss for member {bad} at step {self.step_count_}"
            )
        self._optimizer.step(self.params_, grads, lr)
        self.step_count_ += 1
        self.loss_ = losses
        return self

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        self._initialize(X.shape[1], y.shape[1])
        n = len(X)
        for _ in range(self.max_iter):
            order = self._rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                self.partial_fit(X[idx], y[idx])
        return self

    # -- prediction -------------------------------------------------------

    def predict_all(self, X) -> np.ndarray:
        """Member predictions, shape ``(M, n, n_outputs)``."""
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} input dims, got {X.shape[1]}")
        return self._members(X)

    def _members(self, X):
        out = _mlp.forward(self.params_, X)
        offset = self._offset(X)
        return out if offset is None else out + offset

    def predict(self, X) -> np.ndarray:
        """Ensemble-mean prediction."""
        return self.predict_all(X).mean(axis=0)

    def set_member_params(self, source: int = 0):
        """Copy member ``source``'s parameters into every member."""
        for p in self.params_:
            p[:] = p[source]
        return self


def predict_all(model: EnsembleRegressor, states, actions) -> np.ndarray:
    """``(M, T, d)`` predictions of every member along ``(states, actions)``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64).reshape(len(states), -1)
    check_is_fitted(model, "params_")
    n_in = states.shape[1] + actions.shape[1]
    if n_in != model.n_features_in_:
        raise ValueError(
            f"shape mismatch: model expects {model.n_features_in_} input dims "
            f"(state + action), got {states.shape[1]} + {actions.shape[1]} = {n_in}"
        )
    return model._members(np.concatenate([states, actions], axis=1))


def train_step(model: EnsembleRegressor, batch: TransitionBatch, lr: float):
    """One update of every member; returns ``(model, per_member_losses)``."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    model.partial_fit(batch.inputs, batch.next_states, learning_rate=lr)
    return model, model.loss_.copy()


def save_checkpoint(model: EnsembleRegressor, path) -> None:
    """Write ``magic | u64 header length | JSON header | float64 LE parameters``."""
    check_is_fitted(model, "params_")
    header = {
        "n_members": model.n_members,
        "n_features": model.n_features_in_,
        "n_outputs": model.n_outputs_,
        "hidden": model.hidden,
        "n_hidden_layers": model.n_hidden_layers,
        "residual": model.residual,
        "seeds": list(model.seeds_),
        "step_count": model.step_count_,
        "shapes": [list(p.shape) for p in model.params_],
        "estimator_params": model.get_params(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in model.params_:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> EnsembleRegressor:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not an ensemble checkpoint")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size))
        data = fh.read()
    model = EnsembleRegressor(**header["estimator_params"])
    model._initialize(header["n_features"], header["n_outputs"])
    model.seeds_ = list(header["seeds"])
    model.step_count_ = header["step_count"]
    flat = np.frombuffer(data, dtype="<f8")
    offset = 0
    for p, shape in zip(model.params_, header["shapes"]):
        count = int(np.prod(shape))
        p[...] = flat[offset : offset + count].reshape(shape)
        offset += count
    if offset != flat.size:
        raise ValueError(f"checkpoint holds {flat.size} values, header describes {offset}")
    return model
