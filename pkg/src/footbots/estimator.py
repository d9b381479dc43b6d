"""Scikit-learn style wrapper around :func:`footbots.training.train`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError, DimensionError
from .model import SequenceSample, TaskSpec
from .training import TrainConfig, evaluate_predictions, predict, train
from .validation import check_roles, check_trajectories

__all__ = ["FootBotsRegressor"]


def _samples(X, y, roles) -> list[SequenceSample]:
    positions = np.concatenate([X[..., :2], y], axis=2)
    return [SequenceSample(positions[i], roles[i], X.shape[2]) for i in range(X.shape[0])]


class FootBotsRegressor(RegressorMixin, BaseEstimator):
    """Multi-agent trajectory regressor.

    ``X`` holds observed frames ``(n_scenes, n_agents, t, k)`` and ``y`` the
    future frames ``(n_scenes, n_agents, T, 2)``. With ``k == 3`` the last
    channel is the role code and ``roles`` may be omitted.

    Parameters
    ----------
    task : str
        ``"mp"`` or one of ``"cmp1"`` .. ``"cmp4"``.
    d, heads, d_ff : int
        Model width, attention heads and feed-forward width.
    ns_variant : bool
        Replace social attention with temporal attention.
    epochs, batch_size, lr, warmup_steps, patience : training schedule.
    motion_features : bool
        Feed per-frame displacements alongside positions.
    random_state : int
        Seed for initialisation and shuffling.
    """

    def __init__(self, task="mp", d=32, heads=4, d_ff=128, ns_variant=False, epochs=40,
                 batch_size=16, lr=1e-3, warmup_steps=0, patience=10, motion_features=True,
                 random_state=0):
        self.task = task
        self.d = d
        self.heads = heads
        self.d_ff = d_ff
        self.ns_variant = ns_variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.patience = patience
        self.motion_features = motion_features
        self.random_state = random_state

    def _roles(self, X, roles):
        if roles is None and X.shape[-1] == 3:
            roles = np.rint(X[:, :, 0, 2]).astype(np.int64)
        return check_roles(roles, X.shape[0], X.shape[1])

    def _check_pair(self, X, y):
        X = check_trajectories(X, "X")
        y = check_trajectories(y, "y", width=2)
        if y.shape[:2] != X.shape[:2]:
            raise DimensionError(f"X {X.shape} and y {y.shape} disagree on scenes or agents")
        return X, y

    def fit(self, X, y, roles=None, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` drives early stopping."""
        X, y = self._check_pair(X, y)
        r = self._roles(X, roles)
        train_samples = _samples(X, y, r)
        val_samples = None
        if eval_set is not None:
            Xv, yv = self._check_pair(*eval_set[:2])
            rv = self._roles(Xv, eval_set[2] if len(eval_set) > 2 else None)
            val_samples = _samples(Xv, yv, rv)
        config = TrainConfig(
            task=self.task, d=self.d, heads=self.heads, d_ff=self.d_ff,
            ns_variant=self.ns_variant, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, warmup_steps=self.warmup_steps, patience=self.patience,
            motion_features=self.motion_features, seed=int(self.random_state or 0),
            input_width=X.shape[-1],
        )
        result = train(config, train_samples, val_samples)
        self.model_ = result.model
        self.history_ = result.history
        self.checkpoint_ = result.checkpoint
        self.task_ = config.task_spec
        self.n_features_in_ = X.shape[-1]
        self.horizon_ = y.shape[2]
        return self

    def predict(self, X, roles=None, y_condition=None):
        """Future positions ``(n_scenes, n_agents, T, 2)``.

        Conditioned tasks need ``y_condition``, the future frames of the
        conditioning agents (rows of predicted agents are ignored).
        """
        check_is_fitted(self, "model_")
        X = check_trajectories(X, "X", width=self.n_features_in_)
        r = self._roles(X, roles)
        if y_condition is None:
            if self.task_.is_conditioned:
                raise ContractError(f"task {self.task_.label} needs y_condition")
            y_condition = np.zeros(X.shape[:2] + (self.horizon_, 2), np.float32)
        _, y_condition = self._check_pair(X, y_condition)
        if self.task_.is_conditioned:
            # Predicted agents' futures must not leak into the input.
            keep = ~self.task_.predicted_mask(r)
            y_condition = y_condition * keep[:, :, None, None]
        return predict(self.model_, _samples(X, y_condition, r), self.task_)

    def score(self, X, y, roles=None, sample_weight=None):
        """Negative ADE over the predicted agents (higher is better)."""
        X, y = self._check_pair(X, y)
        r = self._roles(X, roles)
        preds = self.predict(X, r, y_condition=y)
        report = evaluate_predictions(_samples(X, y, r), preds, self.task_)
        return -report["predicted"].ade_m
