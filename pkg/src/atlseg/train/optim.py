from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..tensor import Tensor


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments.

    Moment buffers are keyed by parameter name so they survive checkpointing.
    """

    def __init__(self, named_params: Sequence[tuple[str, Tensor]], beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.01):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.step_count = 0

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params:
            adamw_update(p.data, p.grad, self.m[name], self.v[name], lr, b1, b2, self.eps,
                         self.weight_decay, c1, c2)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def adamw_update(w: np.ndarray, g, m: np.ndarray, v: np.ndarray, lr, b1, b2, eps, wd, c1, c2) -> None:
    """In-place AdamW update of ``w`` and its moments; ``g=None`` means zero gradient."""
    if wd:
        w *= 1.0 - lr * wd
    if g is None:
        g = 0.0
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def adamw_step(params, grads, state: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.0) -> None:
    """Functional single step over parallel lists of arrays. ``state`` holds
    ``m``, ``v`` lists and ``t``; created on first use."""
    if "t" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    c1 = 1.0 - beta1 ** state["t"]
    c2 = 1.0 - beta2 ** state["t"]
    for w, g, m, v in zip(params, grads, state["m"], state["v"]):
        adamw_update(w, g, m, v, lr, beta1, beta2, eps, weight_decay, c1, c2)


def cosine_lr(epoch: int, config) -> float:
    """``lr0 * (1 + cos(pi * epoch / epochs)) / 2``; floor 0, stepped once per epoch."""
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    return config.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
