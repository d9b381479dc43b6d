"""Training and evaluation loops.

One model is trained per task. The objective is the mean displacement error
over the predicted agents only; conditioning agents feed the decoder with
their ground-truth future frames and are left out of the loss.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .baselines import velocity_extrapolate
from .exceptions import ContractError, DataError, DimensionError, NonFiniteError
from .metrics import MetricsReport, summarize
from .model import Batch, FootBots, ModelConfig, SequenceSample, TaskSpec, make_batch
from .optim import Adam, clip_grad_norm
from .persistence import Checkpoint, load_dataset, save_checkpoint

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "evaluate",
    "evaluate_predictions",
    "loss",
    "predict",
    "train",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    task: str = "mp"
    batch_size: int = 16
    epochs: int = 40
    lr: float = 1e-3
    warmup_steps: int = 0
    lr_schedule: str = "plateau"
    lr_decay: float = 0.5
    lr_patience: int = 3
    min_lr: float = 1e-5
    clip_norm: float = 1.0
    patience: int = 10
    seed: int = 0
    ns_variant: bool = False
    d: int = 32
    heads: int = 4
    d_ff: int = 128
    position_scale: float | None = None
    motion_features: bool = True
    velocity_scale: float | None = None
    output_mode: str = "steps"
    input_width: int | None = None
    max_train_sequences: int | None = None
    train_path: str | None = None
    val_path: str | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        TaskSpec.from_name(self.task)
        for name in ("batch_size", "epochs", "patience", "lr_patience", "d", "heads", "d_ff"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1 or self.clip_norm < 0:
            raise ContractError("lr must be positive, lr_decay in (0, 1], clip_norm >= 0")
        if self.lr_schedule not in ("plateau", "cosine"):
            raise ContractError(f"lr_schedule must be 'plateau' or 'cosine', got {self.lr_schedule!r}")

    @property
    def task_spec(self) -> TaskSpec:
        return TaskSpec.from_name(self.task)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ContractError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ade: dict[str, float]
    lr: float
    wall_time: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_ade: float = float("inf")
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @property
    def train_loss(self) -> list[float]:
        return [e.train_loss for e in self.epochs]


@dataclass
class TrainResult:
    model: FootBots
    optimizer: Adam
    history: TrainHistory
    checkpoint: Checkpoint


def loss(pred: tn.Tensor, gt, predicted) -> tn.Tensor:
    """Mean displacement error over predicted agents.

    Parameters
    ----------
    pred : Tensor
        ``[B, M, T, 2]`` (or ``[M, T, 2]``) predictions.
    gt : array_like
        Ground truth of the same shape.
    predicted : array_like of bool
        ``[B, M]`` (or ``[M]``) mask of scored agents.
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ")
    mask = np.asarray(predicted, dtype=pred.dtype)
    if mask.shape != pred.shape[:-2]:
        raise DimensionError(f"mask {mask.shape} does not match agents {pred.shape[:-2]}")
    count = float(mask.sum()) * pred.shape[-2]
    if count == 0:
        raise ContractError("loss over an empty agent set")
    err = tn.l2_norm(pred - gt, axis=-1)
    return tn.scale(tn.sum(tn.mul(err, mask[..., None])), 1.0 / count)


def _load_split(path: str | None) -> list[SequenceSample]:
    if path is None:
        raise DataError("no dataset path configured")
    return load_dataset(path).samples


def _default_scale(samples: Sequence[SequenceSample]) -> float:
    extent = max(float(np.abs(s.positions).max()) for s in samples)
    return float(np.ceil(extent)) if extent > 1.0 else 1.0


def _default_velocity_scale(samples: Sequence[SequenceSample]) -> float:
    # Root-mean-square per-frame step, so displacement features are O(1).
    steps = np.concatenate([np.diff(s.positions, axis=1).reshape(-1, 2) for s in samples[:2000]])
    rms = float(np.sqrt(np.mean(np.sum(steps.astype(np.float64) ** 2, axis=-1))))
    return rms if rms > 0 else 1.0


def predict(model: FootBots, samples_or_batch, task: TaskSpec, batch_size: int = 256) -> np.ndarray:
    """Stacked predictions ``[N, M, T, 2]`` without recording a graph."""
    batch = samples_or_batch
    if not isinstance(batch, Batch):
        batch = make_batch(list(batch), task, model.config.input_width, model.dtype)
    model.eval()
    out = []
    with tn.no_grad():
        for start in range(0, len(batch), batch_size):
            out.append(model.forward_batch(batch.take(slice(start, start + batch_size))).data)
    return np.concatenate(out)


def evaluate_predictions(samples: Sequence[SequenceSample], preds, task: TaskSpec,
                         unit_scale: float = 1.0, model_name: str = "") -> MetricsReport:
    """Shared metric path for any predictor's ``[N, M, T, 2]`` output."""
    batch = make_batch(list(samples), task, 2, np.float64)
    return summarize(
        preds, batch.target, batch.roles, batch.predicted, batch.behaviors,
        unit_scale=unit_scale, model=model_name, task=task.label,
        predict_label=task.predict_label,
    )


def evaluate(model_or_checkpoint, samples: Sequence[SequenceSample], task: TaskSpec | str | None = None,
             unit_scale: float = 1.0, model_name: str | None = None, batch_size: int = 256) -> MetricsReport:
    """Metric report for a trained model, a checkpoint, or ``"velocity"``."""
    samples = list(samples)
    if not samples:
        raise DataError("cannot evaluate on an empty dataset")
    if isinstance(task, str):
        task = TaskSpec.from_name(task)
    if isinstance(model_or_checkpoint, str) and model_or_checkpoint == "velocity":
        task = task or TaskSpec.from_name("mp")
        preds = np.stack([velocity_extrapolate(s.prior, s.T) for s in samples])
        return evaluate_predictions(samples, preds, task, unit_scale, model_name or "Velocity")
    if isinstance(model_or_checkpoint, Checkpoint):
        ckpt = model_or_checkpoint
        model = ckpt.build_model()
        task = task or TaskSpec.from_name(ckpt.metadata.get("task", "mp"))
        model_name = model_name or ckpt.metadata.get("model_name")
    else:
        model = model_or_checkpoint
        if task is None:
            raise ContractError("a task is required when evaluating a bare model")
    if model_name is None:
        model_name = "FootBots NS" if model.config.ns_variant else "FootBots"
    preds = predict(model, samples, task, batch_size)
    return evaluate_predictions(samples, preds, task, unit_scale, model_name)


def _check_finite(loss_value: tn.Tensor, model: FootBots, where: str) -> None:
    if np.isfinite(loss_value.data).all():
        return
    bad = tn.find_nonfinite(loss_value)
    label = f"{bad.name or 'unnamed'} {bad.shape}" if bad is not None else "unknown"
    for name, p in model.named_parameters().items():
        if not np.all(np.isfinite(p.data)):
            label = f"parameter {name} {p.shape}"
            break
    raise NonFiniteError(f"non-finite loss at {where}; first offending tensor: {label}")


def train(config: TrainConfig, train_samples: Sequence[SequenceSample] | None = None,
          val_samples: Sequence[SequenceSample] | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Fit a fresh model; returns the best-validation parameters.

    Deterministic given ``config.seed``: parameter initialisation and the
    shuffle order come from separate streams of that seed.
    """
    task = config.task_spec
    if train_samples is None:
        train_samples = _load_split(config.train_path)
    if val_samples is None and config.val_path is not None:
        val_samples = _load_split(config.val_path)
    train_samples = list(train_samples)
    if config.max_train_sequences is not None:
        train_samples = train_samples[: config.max_train_sequences]
    if not train_samples:
        raise DataError("training set is empty")
    val_samples = list(val_samples) if val_samples else []

    input_width = config.input_width or 2
    model_config = ModelConfig(
        d=config.d, heads=config.heads, d_ff=config.d_ff, ns_variant=config.ns_variant,
        input_width=input_width,
        position_scale=config.position_scale or _default_scale(train_samples),
        motion_features=config.motion_features,
        velocity_scale=config.velocity_scale or _default_velocity_scale(train_samples),
        output_mode=config.output_mode,
        max_len=max(128, train_samples[0].t),
    )
    model = FootBots(model_config, rng=np.random.default_rng([config.seed, 0]))
    shuffle_rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(model.named_parameters(), lr=config.lr)
    params = model.parameters()

    train_batch = make_batch(train_samples, task, input_width)
    val_batch = make_batch(val_samples, task, input_width) if val_samples else None
    n = len(train_batch)
    history = TrainHistory()
    best_state = model.state_dict()
    plateau = 0
    since_best = 0
    global_step = 0
    base_lr = config.lr

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        model.train()
        order = shuffle_rng.permutation(n)
        if config.lr_schedule == "cosine" and global_step >= config.warmup_steps:
            # anneals from lr to min_lr over the full epoch budget
            frac = (epoch - 1) / max(config.epochs - 1, 1)
            optimizer.lr = config.min_lr + 0.5 * (base_lr - config.min_lr) * (1 + np.cos(np.pi * frac))
        total, weight = 0.0, 0.0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            global_step += 1
            if global_step <= config.warmup_steps:
                optimizer.lr = base_lr * global_step / config.warmup_steps
            mb = train_batch.take(order[lo : lo + config.batch_size])
            optimizer.zero_grad()
            value = loss(model.forward_batch(mb), mb.target, mb.predicted)
            _check_finite(value, model, f"epoch {epoch} step {step}")
            value.backward()
            for name, p in model.named_parameters().items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NonFiniteError(f"non-finite gradient in parameter {name} at epoch {epoch}")
            clip_grad_norm(params, config.clip_norm)
            optimizer.step()
            total += value.item() * len(mb)
            weight += len(mb)
        train_loss = total / weight

        val_ade: dict[str, float] = {}
        if val_batch is not None:
            preds = predict(model, val_batch, task)
            report = summarize(preds, val_batch.target, val_batch.roles, val_batch.predicted,
                               val_batch.behaviors)
            val_ade = {k: v.ade_m for k, v in report.subsets.items()}
            score = val_ade["predicted"]
        else:
            score = train_loss

        record = EpochRecord(epoch, train_loss, val_ade, optimizer.lr, time.perf_counter() - start)
        history.epochs.append(record)
        log.info("epoch %d loss %.4f val %.4f lr %.2e (%.1fs)", epoch, train_loss, score,
                 optimizer.lr, record.wall_time)
        if on_epoch is not None:
            on_epoch(record)

        if score < history.best_val_ade:
            history.best_val_ade = score
            history.best_epoch = epoch
            best_state = model.state_dict()
            since_best = plateau = 0
            if config.checkpoint_path:
                save_checkpoint(config.checkpoint_path,
                                _checkpoint(model, optimizer, config, history, best_state))
        else:
            since_best += 1
            plateau += 1
            if (config.lr_schedule == "plateau" and plateau >= config.lr_patience
                    and optimizer.lr > config.min_lr):
                optimizer.lr = max(optimizer.lr * config.lr_decay, config.min_lr)
                plateau = 0
            if since_best >= config.patience:
                history.stopped_early = True
                break

    model.load_state_dict(best_state)
    ckpt = _checkpoint(model, optimizer, config, history, best_state)
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, ckpt)
    return TrainResult(model, optimizer, history, ckpt)


def _checkpoint(model, optimizer, config, history, state) -> Checkpoint:
    opt = dataclasses.replace(
        optimizer.state,
        m={k: v.copy() for k, v in optimizer.state.m.items()},
        v={k: v.copy() for k, v in optimizer.state.v.items()},
    )
    metadata = {
        "task": config.task,
        "model_name": "FootBots NS" if config.ns_variant else "FootBots",
        "epoch": history.best_epoch,
        "epochs_run": len(history.epochs),
        "seed": config.seed,
        "best_val_ade": history.best_val_ade,
        "train_config": config.to_dict(),
    }
    return Checkpoint(model.config, {k: v.copy() for k, v in state.items()}, opt, metadata)
