"""Pre-norm encoder classifier, training loop and checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .config import ConfigError, EncoderConfig, TrainConfig, strict_from_dict
from .encoder import (
    BlockParams,
    EncoderClassifier,
    classify,
    cross_entropy,
    encoder_block,
    layer_norm,
    linear,
)
from .optim import Adam, warmup_lr
from .train import EpochRow, TrainingDiverged, TrainReport, evaluate, predict, train

__all__ = [
    "Adam",
    "BlockParams",
    "CheckpointError",
    "ConfigError",
    "EncoderClassifier",
    "EncoderConfig",
    "EpochRow",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "classify",
    "cross_entropy",
    "encoder_block",
    "evaluate",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "predict",
    "read_checkpoint",
    "save_checkpoint",
    "strict_from_dict",
    "train",
    "warmup_lr",
]
