from __future__ import annotations

import numpy as np

from ..tensor import Tensor, sigmoid, softplus
from .config import TrainConfig


def bce_dice_loss(logits: Tensor, target, config: TrainConfig) -> Tensor:
    """Weighted mean BCE plus soft Dice loss, both computed from raw logits.

    BCE uses ``softplus(x) - x*t``, the overflow-free form of
    ``-[t log p + (1-t) log(1-p)]``. Dice sums over the whole batch.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        if t.ndim == logits.ndim - 1 and logits.shape[1] == 1:
            t = t[:, None]
        if t.shape != logits.shape:
            raise ValueError(f"logits {logits.shape} and target {np.shape(target)} differ in shape")
    tt = Tensor(t)
    loss = None
    if config.loss_bce_weight:
        bce = (softplus(logits) - logits * tt).mean()
        loss = bce * config.loss_bce_weight
    if config.loss_dice_weight:
        p = sigmoid(logits)
        s = config.dice_smooth
        dice = 1.0 - ((p * tt).sum() * 2.0 + s) / (p.sum() + float(t.sum()) + s)
        term = dice * config.loss_dice_weight
        loss = term if loss is None else loss + term
    return loss
