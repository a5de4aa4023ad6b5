from .checkpoint import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ShapeMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .config import TrainConfig
from .loss import bce_dice_loss
from .optim import AdamW, adamw_step, cosine_lr
from .params import ParamReport, apply_freeze_policy, count_params
from .trainer import EpochRecord, TrainResult, TrainState, evaluate, history_csv, predict_logits, train

__all__ = [
    "CheckpointError", "CheckpointFormatError", "CheckpointTruncatedError",
    "CheckpointVersionError", "ShapeMismatchError", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "bce_dice_loss", "AdamW", "adamw_step", "cosine_lr", "ParamReport",
    "apply_freeze_policy", "count_params", "EpochRecord", "TrainResult", "TrainState",
    "evaluate", "history_csv", "predict_logits", "train",
]
