"""FootBots encoder-decoder with decoupled temporal and social attention.

Shapes follow the convention ``[batch, agents, frames, width]``. Temporal
blocks treat every agent of every scene as an independent sequence;
social blocks treat every frame of every scene as an independent set of
agents. The non-social (NS) variant runs its social-position blocks along
time instead, so no information ever crosses between agents.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .attention import (
    FeedForward,
    Module,
    MultiAttentionBlockDecoder,
    PositionalEncoding,
    SetAttentionBlock,
)
from .exceptions import ContractError, DataError, DimensionError
from .tensor import Tensor

__all__ = [
    "Batch",
    "FootBots",
    "ModelConfig",
    "Role",
    "SequenceSample",
    "TaskKind",
    "TaskSpec",
    "make_batch",
    "make_ns_variant",
]


class Role(enum.IntEnum):
    BALL = 0
    DEFENSE = 1
    OFFENSE = 2


class TaskKind(str, enum.Enum):
    MP = "mp"
    CMP1 = "cmp1"
    CMP2 = "cmp2"
    CMP3 = "cmp3"
    CMP4 = "cmp4"


# Roles that are predicted for each task; every other agent conditions.
_PREDICTED_ROLES = {
    TaskKind.MP: frozenset(Role),
    TaskKind.CMP1: frozenset({Role.DEFENSE, Role.OFFENSE}),
    TaskKind.CMP2: frozenset({Role.DEFENSE}),
    TaskKind.CMP3: frozenset({Role.OFFENSE}),
    TaskKind.CMP4: frozenset({Role.BALL}),
}

_PREDICT_LABEL = {
    TaskKind.MP: "Players+Ball",
    TaskKind.CMP1: "Players",
    TaskKind.CMP2: "Defensive",
    TaskKind.CMP3: "Offensive",
    TaskKind.CMP4: "Ball",
}


@dataclass(frozen=True)
class TaskSpec:
    """Which agents are predicted (P) and which condition the decoder (C)."""

    kind: TaskKind = TaskKind.MP

    @classmethod
    def from_name(cls, name: str | TaskKind) -> "TaskSpec":
        try:
            return cls(TaskKind(name.lower() if isinstance(name, str) else name))
        except ValueError:
            choices = ", ".join(k.value for k in TaskKind)
            raise ContractError(f"unknown task {name!r}; expected one of {choices}") from None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def label(self) -> str:
        return self.kind.name if self.kind is TaskKind.MP else f"CMP{self.kind.value[-1]}"

    @property
    def predict_label(self) -> str:
        return _PREDICT_LABEL[self.kind]

    @property
    def is_conditioned(self) -> bool:
        return self.kind is not TaskKind.MP

    def predicted_mask(self, roles: np.ndarray) -> np.ndarray:
        roles = np.asarray(roles)
        wanted = [int(r) for r in _PREDICTED_ROLES[self.kind]]
        return np.isin(roles, wanted)

    def conditioning_mask(self, roles: np.ndarray) -> np.ndarray:
        return ~self.predicted_mask(roles)


@dataclass
class SequenceSample:
    """One scene: ``positions[M, t + T, 2]`` plus per-agent roles.

    ``behaviors`` holds generator metadata for synthetic scenes (``-1`` for
    agents without a behaviour label).
    """

    positions: np.ndarray
    roles: np.ndarray
    t: int
    agent_ids: np.ndarray | None = None
    behaviors: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions)
        self.roles = np.asarray(self.roles, dtype=np.int64)
        if self.positions.ndim != 3 or self.positions.shape[-1] != 2:
            raise DataError(f"positions must have shape [M, frames, 2], got {self.positions.shape}")
        m, frames, _ = self.positions.shape
        if m < 1:
            raise DataError("a scene needs at least one agent")
        if self.roles.shape != (m,):
            raise DataError(f"roles must have shape ({m},), got {self.roles.shape}")
        if not 1 <= self.T <= self.t:
            raise DataError(
                f"need 1 <= T <= t, got t={self.t}, T={self.T} ({frames} frames)"
            )
        if int(np.sum(self.roles == Role.BALL)) != 1:
            raise DataError("a scene must contain exactly one ball")
        if self.agent_ids is None:
            self.agent_ids = np.arange(m, dtype=np.int64)
        else:
            self.agent_ids = np.asarray(self.agent_ids, dtype=np.int64)
        if self.behaviors is not None:
            self.behaviors = np.asarray(self.behaviors, dtype=np.int64)

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def T(self) -> int:
        return self.positions.shape[1] - self.t

    @property
    def prior(self) -> np.ndarray:
        return self.positions[:, : self.t]

    @property
    def future(self) -> np.ndarray:
        return self.positions[:, self.t :]

    def features(self, k: int) -> np.ndarray:
        """Per-frame agent features: ``xy`` (k=2) or ``xy`` plus role (k=3)."""
        if k == 2:
            return self.positions
        if k == 3:
            role = np.broadcast_to(
                self.roles[:, None, None].astype(self.positions.dtype),
                self.positions.shape[:2] + (1,),
            )
            return np.concatenate([self.positions, role], axis=-1)
        raise ContractError(f"feature width must be 2 or 3, got {k}")

    def permuted(self, perm: Sequence[int]) -> "SequenceSample":
        perm = np.asarray(perm)
        return SequenceSample(
            self.positions[perm],
            self.roles[perm],
            self.t,
            agent_ids=self.agent_ids[perm],
            behaviors=None if self.behaviors is None else self.behaviors[perm],
        )


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``position_scale`` divides xy inputs and multiplies predicted offsets,
    so the network works at unit scale regardless of the data's units.
    With ``motion_features`` each frame also carries its displacement from
    the previous frame, divided by ``velocity_scale``. ``output_mode``
    chooses how the head's 2-D outputs become offsets from the last
    observed position: ``"offset"`` scales them by ``position_scale``;
    ``"steps"`` reads them as per-frame steps in ``velocity_scale`` units
    and accumulates them over the horizon.
    """

    d: int = 32
    heads: int = 4
    d_ff: int = 128
    max_len: int = 128
    ns_variant: bool = False
    input_width: int = 2
    position_scale: float = 1.0
    dropout: float = 0.0
    motion_features: bool = False
    velocity_scale: float = 1.0
    output_mode: str = "offset"

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d_ff < 1:
            raise ContractError("d, heads and d_ff must be positive")
        if self.d % self.heads:
            raise ContractError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.input_width not in (2, 3):
            raise ContractError(f"input_width must be 2 or 3, got {self.input_width}")
        if self.position_scale <= 0 or self.velocity_scale <= 0:
            raise ContractError("position_scale and velocity_scale must be positive")
        if self.output_mode not in ("offset", "steps"):
            raise ContractError(f"output_mode must be 'offset' or 'steps', got {self.output_mode!r}")

    @property
    def feature_width(self) -> int:
        """Width seen by the embedding networks."""
        return self.input_width + 2 * bool(self.motion_features)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def make_ns_variant(config: ModelConfig) -> ModelConfig:
    """Copy of ``config`` with social attention replaced by temporal attention."""
    return dataclasses.replace(config, ns_variant=True)


@dataclass
class Batch:
    """Stacked model inputs for scenes sharing ``M``, ``t`` and ``T``."""

    prior: np.ndarray  # [B, M, t, k]
    future_features: np.ndarray  # [B, M, T, k]
    target: np.ndarray  # [B, M, T, 2]
    last_observed: np.ndarray  # [B, M, 2]
    predicted: np.ndarray  # [B, M] bool
    conditioning: np.ndarray  # [B, M] bool
    roles: np.ndarray  # [B, M]
    behaviors: np.ndarray | None = field(default=None)

    @property
    def T(self) -> int:
        return self.target.shape[2]

    def __len__(self) -> int:
        return self.prior.shape[0]

    def take(self, index) -> "Batch":
        return Batch(
            prior=self.prior[index],
            future_features=self.future_features[index],
            target=self.target[index],
            last_observed=self.last_observed[index],
            predicted=self.predicted[index],
            conditioning=self.conditioning[index],
            roles=self.roles[index],
            behaviors=None if self.behaviors is None else self.behaviors[index],
        )


def make_batch(samples: Sequence[SequenceSample], task: TaskSpec, k: int, dtype=np.float32) -> Batch:
    if not samples:
        raise DataError("cannot batch zero scenes")
    shapes = {(s.M, s.t, s.T) for s in samples}
    if len(shapes) != 1:
        raise DataError(f"scenes in one batch must share (M, t, T); got {sorted(shapes)}")
    t = samples[0].t
    feats = np.stack([s.features(k) for s in samples]).astype(dtype)
    roles = np.stack([s.roles for s in samples])
    predicted = np.stack([task.predicted_mask(s.roles) for s in samples])
    behaviors = None
    if all(s.behaviors is not None for s in samples):
        behaviors = np.stack([s.behaviors for s in samples])
    return Batch(
        prior=feats[:, :, :t],
        future_features=feats[:, :, t:],
        target=feats[:, :, t:, :2],
        last_observed=feats[:, :, t - 1, :2],
        predicted=predicted,
        conditioning=~predicted,
        roles=roles,
        behaviors=behaviors,
    )


class FootBots(Module):
    """Encoder-decoder trajectory model.

    The encoder embeds each observation with a feed-forward network, adds a
    sinusoidal time encoding, and applies two temporal set-attention blocks
    followed by one social block. The decoder adds a time encoding to its
    task-dependent input, applies two temporal decoder blocks that
    cross-attend to the agent's own context rows, one social block, and a
    feed-forward head whose 2-D offsets are added to the last observed
    position.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | int | None = 0, dtype=np.float32):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = config
        self.dtype = np.dtype(dtype)
        c = config
        self.input_ffn = FeedForward(c.feature_width, c.d, c.d, rng, dtype)
        self.enc_temporal = [
            SetAttentionBlock(c.d, c.heads, c.d_ff, rng, dtype, c.dropout) for _ in range(2)
        ]
        # Applied across agents, or across time in the NS variant.
        self.enc_social = SetAttentionBlock(c.d, c.heads, c.d_ff, rng, dtype, c.dropout)
        self.dec_temporal = [
            MultiAttentionBlockDecoder(c.d, c.heads, c.d_ff, rng, dtype, c.dropout)
            for _ in range(2)
        ]
        self.dec_social = SetAttentionBlock(c.d, c.heads, c.d_ff, rng, dtype, c.dropout)
        self.cond_ffn = FeedForward(c.feature_width, c.d, c.d, rng, dtype)
        self.out_ffn = FeedForward(c.d, c.d, 2, rng, dtype)
        self.pe = PositionalEncoding(c.max_len, c.d, dtype)
        for name, p in self.named_parameters().items():
            p.name = name

    # -- helpers ---------------------------------------------------------
    def _scaled(self, x, previous=None) -> np.ndarray:
        """Network features for frames ``x[..., frames, k]``.

        ``previous`` is the frame preceding ``x[..., 0, :]``; without it the
        first displacement is zero.
        """
        x = np.array(x.data if isinstance(x, Tensor) else x, dtype=self.dtype, copy=True)
        if self.config.motion_features and x.ndim >= 2:
            xy = x[..., :2]
            first = xy[..., :1, :] if previous is None else np.asarray(previous, self.dtype)[..., None, :]
            step = np.diff(xy, axis=-2, prepend=first) / self.dtype.type(self.config.velocity_scale)
            x = np.concatenate([x, step], axis=-1)
        x[..., :2] /= self.dtype.type(self.config.position_scale)
        return x

    def _mix_agents(self, block: SetAttentionBlock, x: Tensor) -> Tensor:
        b, m, n, d = x.shape
        if self.config.ns_variant:
            y = block(tn.reshape(x, (b * m, n, d)))
            return tn.reshape(y, (b, m, n, d))
        y = tn.transpose(x, (0, 2, 1, 3))
        y = block(tn.reshape(y, (b * n, m, d)))
        return tn.transpose(tn.reshape(y, (b, n, m, d)), (0, 2, 1, 3))

    # -- stages ----------------------------------------------------------
    def encode(self, prior) -> Tensor:
        """Context ``[B, M, t, d]`` from observations ``[B, M, t, k]``."""
        prior = np.asarray(prior.data if isinstance(prior, Tensor) else prior)
        if prior.ndim != 4 or prior.shape[-1] != self.config.input_width:
            raise DimensionError(
                f"prior must be [B, M, t, {self.config.input_width}], got {prior.shape}"
            )
        x = self._scaled(prior)
        b, m, t, _ = x.shape
        if t < 1:
            raise ContractError("need at least one observed frame")
        d = self.config.d
        h = self.input_ffn(Tensor(x)) + self.pe(t)
        h = tn.reshape(h, (b * m, t, d))
        for block in self.enc_temporal:
            h = block(h)
        return self._mix_agents(self.enc_social, tn.reshape(h, (b, m, t, d)))

    def build_decoder_input(self, context: Tensor, T: int, future_features=None, conditioning=None,
                            last_observed=None) -> Tensor:
        """Decoder input ``[B, M, T, d]``.

        Predicted agents use their last ``T`` context frames; conditioning
        agents (``conditioning[b, m]`` true) use the embedded ground-truth
        future frames. ``last_observed`` anchors the first future
        displacement when motion features are on.
        """
        b, m, t, d = context.shape
        if T > t:
            raise ContractError(f"cannot predict T={T} frames from t={t} observed frames")
        if T < 1:
            raise ContractError(f"T must be >= 1, got {T}")
        recent = context[:, :, t - T :, :]
        if conditioning is None or not np.any(conditioning):
            return recent
        if future_features is None:
            raise DataError("conditioned prediction needs the conditioning agents' future frames")
        future = self._scaled(future_features, last_observed)
        if future.shape[:3] != (b, m, T):
            raise DataError(
                f"conditioning frames have shape {future.shape}, expected [{b}, {m}, {T}, k]"
            )
        mask = np.asarray(conditioning, dtype=self.dtype)[:, :, None, None]
        embedded = self.cond_ffn(Tensor(future))
        return tn.mul(embedded, mask) + tn.mul(recent, 1.0 - mask)

    def decode(self, h: Tensor, context: Tensor, last_observed) -> Tensor:
        """Predicted positions ``[B, M, T, 2]``."""
        b, m, T, d = h.shape
        t = context.shape[2]
        if context.shape[:2] != (b, m) or context.shape[3] != d:
            raise DimensionError(f"decoder input {h.shape} and context {context.shape} disagree")
        last = np.asarray(last_observed, dtype=self.dtype)
        if last.shape != (b, m, 2):
            raise DimensionError(f"last_observed must be [{b}, {m}, 2], got {last.shape}")
        y = tn.reshape(h + self.pe(T), (b * m, T, d))
        ctx = tn.reshape(context, (b * m, t, d))
        for block in self.dec_temporal:
            y = block(y, ctx)
        y = self._mix_agents(self.dec_social, tn.reshape(y, (b, m, T, d)))
        out = self.out_ffn(y)
        if self.config.output_mode == "steps":
            # offsets[j] = sum_{i <= j} step[i], as a matmul with a triangular matrix
            tri = np.tril(np.ones((T, T), dtype=self.dtype)) * self.dtype.type(self.config.velocity_scale)
            offsets = tn.transpose(tn.matmul(tn.transpose(out, (0, 1, 3, 2)), tri.T), (0, 1, 3, 2))
        else:
            offsets = tn.scale(out, self.config.position_scale)
        return offsets + last[:, :, None, :]

    def forward(self, prior, T: int, last_observed=None, future_features=None, conditioning=None) -> Tensor:
        """Full pass for a batch ``[B, M, t, k]`` or a single scene ``[M, t, k]``."""
        prior = np.asarray(prior.data if isinstance(prior, Tensor) else prior)
        single = prior.ndim == 3
        if single:
            prior = prior[None]
            if future_features is not None:
                future_features = np.asarray(future_features)[None]
            if conditioning is not None:
                conditioning = np.asarray(conditioning)[None]
            if last_observed is not None:
                last_observed = np.asarray(last_observed)[None]
        if last_observed is None:
            last_observed = prior[:, :, -1, :2]
        context = self.encode(prior)
        h = self.build_decoder_input(context, T, future_features, conditioning, last_observed)
        out = self.decode(h, context, last_observed)
        if single:
            out = tn.reshape(out, out.shape[1:])
        return out

    def forward_batch(self, batch: Batch) -> Tensor:
        cond = batch.conditioning if np.any(batch.conditioning) else None
        return self.forward(
            batch.prior,
            batch.T,
            last_observed=batch.last_observed,
            future_features=batch.future_features if cond is not None else None,
            conditioning=cond,
        )

    def predict_sample(self, task: TaskSpec, sample: SequenceSample) -> np.ndarray:
        batch = make_batch([sample], task, self.config.input_width, self.dtype)
        with tn.no_grad():
            return self.forward_batch(batch).data[0]

    # -- parameter access ------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ContractError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {value.shape}, model expects {p.shape}")
            p.data = value.astype(p.dtype, copy=True)
