"""Multi-agent soccer trajectory prediction with decoupled attention."""

from .estimator import FootBotsRegressor
from .model import FootBots, ModelConfig, Role, SequenceSample, TaskKind, TaskSpec
from .synthetic import SyntheticConfig, generate_dataset
from .training import TrainConfig, evaluate, train

__all__ = [
    "FootBots",
    "FootBotsRegressor",
    "ModelConfig",
    "Role",
    "SequenceSample",
    "SyntheticConfig",
    "TaskKind",
    "TaskSpec",
    "TrainConfig",
    "evaluate",
    "generate_dataset",
    "train",
]

__version__ = "0.1.0"
