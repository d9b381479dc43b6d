"""Input validation helpers for the estimator interface."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, DimensionError
from .model import Role


def check_trajectories(X, name: str = "X", width: int | None = None, dtype=np.float32) -> np.ndarray:
    """Validate a stack of scenes ``[n_scenes, n_agents, n_frames, k]``.

    Returns a finite floating array; raises :class:`DimensionError` on a wrong
    rank or feature width and :class:`DataError` on NaN/Inf entries.
    """
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim != 4:
        raise DimensionError(
            f"{name} must have shape (n_scenes, n_agents, n_frames, k), got {arr.shape}"
        )
    if width is not None and arr.shape[-1] != width:
        raise DimensionError(f"{name} must have feature width {width}, got {arr.shape[-1]}")
    if arr.shape[-1] not in (2, 3):
        raise DimensionError(f"{name} feature width must be 2 or 3, got {arr.shape[-1]}")
    if arr.shape[0] == 0 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise DimensionError(f"{name} has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or infinite values")
    return arr


def check_roles(roles, n_scenes: int, n_agents: int) -> np.ndarray:
    """Broadcast roles to ``[n_scenes, n_agents]``.

    ``None`` means the first agent is the ball and every other agent an
    offensive player.
    """
    if roles is None:
        row = np.full(n_agents, int(Role.OFFENSE))
        row[0] = Role.BALL
        roles = row
    roles = np.asarray(roles, dtype=np.int64)
    if roles.ndim == 1:
        roles = np.broadcast_to(roles, (n_scenes, roles.shape[0]))
    if roles.shape != (n_scenes, n_agents):
        raise DimensionError(f"roles must have shape ({n_scenes}, {n_agents}), got {roles.shape}")
    valid = {int(r) for r in Role}
    if not set(np.unique(roles).tolist()) <= valid:
        raise DataError(f"roles must be drawn from {sorted(valid)}")
    return np.array(roles)
