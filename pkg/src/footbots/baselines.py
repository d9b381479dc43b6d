"""Constant-velocity extrapolation baseline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError
from .validation import check_trajectories

__all__ = ["VelocityBaseline", "velocity_extrapolate"]


def velocity_extrapolate(prior, T: int) -> np.ndarray:
    """Extend each track linearly with its last observed velocity.

    Parameters
    ----------
    prior : array_like of shape (..., t, 2)
        Observed positions; ``t >= 2``.
    T : int
        Number of frames to predict.

    Returns
    -------
    ndarray of shape (..., T, 2)
        ``x_t + j * (x_t - x_{t-1})`` for ``j = 1..T``. No clamping to the
        field.
    """
    prior = np.asarray(prior)
    if prior.ndim < 2 or prior.shape[-1] != 2:
        raise ContractError(f"prior must have shape (..., t, 2), got {prior.shape}")
    if prior.shape[-2] < 2:
        raise ContractError("velocity extrapolation needs at least two observed frames")
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    last = prior[..., -1, :]
    velocity = last - prior[..., -2, :]
    steps = np.arange(1, T + 1, dtype=prior.dtype if np.issubdtype(prior.dtype, np.floating) else np.float64)
    return last[..., None, :] + steps[:, None] * velocity[..., None, :]


class VelocityBaseline(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`velocity_extrapolate`.

    Parameters
    ----------
    horizon : int, optional
        Frames to predict. When ``None`` it is taken from ``y`` in
        :meth:`fit`.
    """

    def __init__(self, horizon: int | None = None):
        self.horizon = horizon

    def fit(self, X, y=None):
        X = check_trajectories(X, name="X")
        if self.horizon is None:
            if y is None:
                raise ContractError("either horizon or y is needed to fix the prediction length")
            y = check_trajectories(y, name="y", width=2)
            self.horizon_ = y.shape[-2]
        else:
            self.horizon_ = int(self.horizon)
        self.n_agents_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "horizon_")
        X = check_trajectories(X, name="X")
        return velocity_extrapolate(X[..., :2], self.horizon_)

    def score(self, X, y, sample_weight=None):
        y = check_trajectories(y, name="y", width=2)
        pred = self.predict(X)
        return -float(np.linalg.norm(pred - y, axis=-1).mean())
