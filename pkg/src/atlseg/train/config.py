from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr0: float = 2e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 7
    loss_bce_weight: float = 1.0
    loss_dice_weight: float = 1.0
    dice_smooth: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss_bce_weight < 0 or self.loss_dice_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.loss_bce_weight == 0 and self.loss_dice_weight == 0:
            raise ValueError("loss weights must not both be zero")
