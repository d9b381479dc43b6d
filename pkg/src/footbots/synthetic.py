"""Procedural five-agent scenes: one ball and four players.

The ball moves in straight segments with at most one random change of
direction. Players are stationary (S), linear (L) or attracted by the ball
(A). Every position stays inside the square ``[-bound, bound]^2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError
from .model import Role, SequenceSample

__all__ = [
    "BehaviorKind",
    "SyntheticConfig",
    "generate_ball",
    "generate_dataset",
    "generate_player",
    "generate_sequence",
    "sequence_rng",
]

TRAIN_STREAM = 0
VAL_STREAM = 1


class BehaviorKind(enum.IntEnum):
    S = 0  # stationary + noise
    L = 1  # linear + noise
    A = 2  # attracted by the ball


@dataclass
class SyntheticConfig:
    num_train: int = 10000
    num_val: int = 1500
    frames: int = 20
    t: int = 10
    agents: int = 5
    bound: float = 15.0
    noise_std: float = 0.05
    ball_speed_range: tuple[float, float] = (0.3, 1.5)
    player_speed_range: tuple[float, float] = (0.1, 0.5)
    attractor_gain: float = 0.2
    max_player_speed: float = 1.0
    direction_change_prob: float = 0.5
    direction_change_window: tuple[int, int] = (5, 15)
    start_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        self.ball_speed_range = tuple(float(v) for v in self.ball_speed_range)
        self.player_speed_range = tuple(float(v) for v in self.player_speed_range)
        self.direction_change_window = tuple(int(v) for v in self.direction_change_window)
        if not 0 < self.t < self.frames:
            raise ContractError(f"need 0 < t < frames, got t={self.t}, frames={self.frames}")
        if self.frames - self.t > self.t:
            raise ContractError("the predicted horizon may not exceed the observed one")
        if self.agents != 5:
            raise ContractError("the synthetic scenes have exactly five agents")
        if self.bound <= 0 or self.noise_std < 0:
            raise ContractError("bound must be positive and noise_std non-negative")
        for name in ("ball_speed_range", "player_speed_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ContractError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        lo, hi = self.direction_change_window
        if not 0 < lo <= hi < self.frames:
            raise ContractError(f"direction_change_window {(lo, hi)} outside the sequence")
        if self.attractor_gain <= 0 or self.max_player_speed <= 0:
            raise ContractError("attractor_gain and max_player_speed must be positive")
        if not 0 <= self.direction_change_prob <= 1:
            raise ContractError("direction_change_prob must lie in [0, 1]")
        if self.num_train < 0 or self.num_val < 0:
            raise ContractError("dataset sizes must be non-negative")

    @property
    def T(self) -> int:
        return self.frames - self.t


def sequence_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator for one scene, keyed by ``(seed, stream, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


def _unit(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def _reflect(pos: np.ndarray, vel: np.ndarray, bound: float) -> None:
    # In place: mirror the overshoot back inside and flip the velocity.
    for axis in range(2):
        if pos[axis] > bound:
            pos[axis] = 2 * bound - pos[axis]
            vel[axis] = -vel[axis]
        elif pos[axis] < -bound:
            pos[axis] = -2 * bound - pos[axis]
            vel[axis] = -vel[axis]
    np.clip(pos, -bound, bound, out=pos)


def _linear_path(start, velocity, frames, bound, change_at=None, new_velocity=None):
    pos = np.array(start, dtype=np.float64)
    vel = np.array(velocity, dtype=np.float64)
    path = np.empty((frames, 2))
    path[0] = pos
    for j in range(1, frames):
        if change_at is not None and j == change_at:
            vel = np.array(new_velocity, dtype=np.float64)
        pos = pos + vel
        _reflect(pos, vel, bound)
        path[j] = pos
    return path


def _observe(path: np.ndarray, rng: np.random.Generator, config: SyntheticConfig) -> np.ndarray:
    noisy = path + rng.normal(0.0, config.noise_std, size=path.shape) if config.noise_std else path
    return np.clip(noisy, -config.bound, config.bound)


def _start(rng, config):
    half = config.bound * config.start_fraction
    return rng.uniform(-half, half, size=2)


def _clean_ball(rng: np.random.Generator, config: SyntheticConfig) -> np.ndarray:
    speed = rng.uniform(*config.ball_speed_range)
    velocity = speed * _unit(rng.uniform(0, 2 * np.pi))
    start = _start(rng, config)
    change_at = new_velocity = None
    if rng.random() < config.direction_change_prob:
        lo, hi = config.direction_change_window
        change_at = int(rng.integers(lo, hi + 1))
        new_velocity = speed * _unit(rng.uniform(0, 2 * np.pi))
    return _linear_path(start, velocity, config.frames, config.bound, change_at, new_velocity)


def generate_ball(rng: np.random.Generator, config: SyntheticConfig, return_clean: bool = False):
    """Ball positions ``[frames, 2]``.

    Constant-velocity segments with a direction change (probability
    ``direction_change_prob``) at a frame drawn uniformly from
    ``direction_change_window``; Gaussian observation noise on top.
    """
    clean = _clean_ball(rng, config)
    observed = _observe(clean, rng, config)
    return (observed, clean) if return_clean else observed


def generate_player(kind: BehaviorKind, ball: np.ndarray, rng: np.random.Generator, config: SyntheticConfig) -> np.ndarray:
    """Player positions ``[frames, 2]`` for one behaviour.

    ``ball`` is the (noise-free) ball path that attracts type-A players.
    """
    kind = BehaviorKind(kind)
    frames, bound = config.frames, config.bound
    start = _start(rng, config)
    if kind is BehaviorKind.S:
        return _observe(np.repeat(start[None], frames, axis=0), rng, config)
    if kind is BehaviorKind.L:
        speed = rng.uniform(*config.player_speed_range)
        velocity = speed * _unit(rng.uniform(0, 2 * np.pi))
        return _observe(_linear_path(start, velocity, frames, bound), rng, config)
    path = np.empty((frames, 2))
    pos = start.copy()
    path[0] = pos
    for j in range(1, frames):
        step = config.attractor_gain * (ball[j - 1] - pos)
        norm = np.linalg.norm(step)
        if norm > config.max_player_speed:
            step *= config.max_player_speed / norm
        if config.noise_std:
            step = step + rng.normal(0.0, config.noise_std, size=2)
        pos = np.clip(pos + step, -bound, bound)
        path[j] = pos
    return path


def draw_behaviors(rng: np.random.Generator, players: int = 4) -> np.ndarray:
    """Uniform i.i.d. behaviours, redrawn until at least one player is type A."""
    while True:
        kinds = rng.integers(0, 3, size=players)
        if np.any(kinds == BehaviorKind.A):
            return kinds


def generate_sequence(rng: np.random.Generator, config: SyntheticConfig) -> SequenceSample:
    """One scene: ball at index 0, then four players.

    Players 1-2 carry the offensive role and 3-4 the defensive role so
    that team-conditioned tasks can run on synthetic data.
    """
    kinds = draw_behaviors(rng, config.agents - 1)
    ball, clean_ball = generate_ball(rng, config, return_clean=True)
    tracks = [ball] + [generate_player(k, clean_ball, rng, config) for k in kinds]
    positions = np.stack(tracks).astype(np.float32)
    roles = np.array([Role.BALL, Role.OFFENSE, Role.OFFENSE, Role.DEFENSE, Role.DEFENSE])
    behaviors = np.concatenate([[-1], kinds])
    return SequenceSample(positions, roles, config.t, behaviors=behaviors)


def generate_split(config: SyntheticConfig, stream: int, count: int, seed: int | None = None) -> list[SequenceSample]:
    seed = config.seed if seed is None else seed
    return [generate_sequence(sequence_rng(seed, stream, i), config) for i in range(count)]


def generate_dataset(config: SyntheticConfig, seed: int | None = None):
    """``(train, val)`` scene lists; a pure function of ``config`` and ``seed``."""
    train = generate_split(config, TRAIN_STREAM, config.num_train, seed)
    val = generate_split(config, VAL_STREAM, config.num_val, seed)
    return train, val
