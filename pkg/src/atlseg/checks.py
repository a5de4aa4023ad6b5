"""Finite-difference verification suite shared by the CLI and the tests."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapter import make_variant
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import ModelConfig, SegModel
from .tensor import (
    Tensor,
    backward,
    conv2d,
    conv_transpose2d,
    gelu,
    grad_check_many,
    layer_norm,
    linear,
    matmul,
    relative_error,
    resize_bilinear,
    sigmoid,
    softmax,
    softplus,
)
from .train.config import TrainConfig
from .train.loss import bce_dice_loss

TOLERANCE = 1e-5


def _rand(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape))


def _positive(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, size=shape))


# each entry builds (inputs, fn) where fn maps the input list to a tensor
OP_FAMILIES: dict[str, Callable] = {
    "add": lambda r: ([_rand(r, 3, 4), _rand(r, 4)], lambda xs: xs[0] + xs[1]),
    "mul": lambda r: ([_rand(r, 3, 4), _rand(r, 3, 1)], lambda xs: xs[0] * xs[1]),
    "div": lambda r: ([_rand(r, 3, 4), _positive(r, 4)], lambda xs: xs[0] / xs[1]),
    "reshape_transpose": lambda r: ([_rand(r, 2, 3, 4)], lambda xs: xs[0].transpose(2, 0, 1).reshape(4, 6)),
    "sum_mean": lambda r: ([_rand(r, 3, 4)], lambda xs: xs[0].sum(axis=1) + xs[0].mean(axis=1)),
    "matmul": lambda r: ([_rand(r, 2, 3, 4), _rand(r, 4, 2)], lambda xs: matmul(*xs)),
    "linear": lambda r: ([_rand(r, 5, 3), _rand(r, 3, 2), _rand(r, 2)], lambda xs: linear(*xs)),
    "gelu": lambda r: ([_rand(r, 3, 4, scale=2.0)], lambda xs: gelu(xs[0])),
    "sigmoid": lambda r: ([_rand(r, 6, scale=3.0)], lambda xs: sigmoid(xs[0])),
    "softplus": lambda r: ([_rand(r, 6, scale=3.0)], lambda xs: softplus(xs[0])),
    "softmax": lambda r: ([_rand(r, 3, 5)], lambda xs: softmax(xs[0])),
    "layer_norm": lambda r: ([_rand(r, 3, 5), _rand(r, 5), _rand(r, 5)], lambda xs: layer_norm(*xs)),
    "conv2d": lambda r: ([_rand(r, 1, 2, 4, 4), _rand(r, 3, 2, 3, 3), _rand(r, 3)],
                         lambda xs: conv2d(*xs, padding=1)),
    "conv_transpose2d": lambda r: ([_rand(r, 1, 3, 2, 2), _rand(r, 3, 2, 2, 2), _rand(r, 2)],
                                   lambda xs: conv_transpose2d(*xs, stride=2)),
    "resize_bilinear": lambda r: ([_rand(r, 1, 2, 3, 3)], lambda xs: resize_bilinear(xs[0], (7, 5))),
}

MODEL_VARIANTS = ("TransLandSeg", "TransLandSeg-6", "TransLandSeg-3")


@dataclass(frozen=True)
class CheckResult:
    family: str
    worst: float
    checks: int

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


def check_op_family(name: str, seeds=range(10), h: float = 1e-5) -> CheckResult:
    """Per-coordinate check of a random weighted sum of the op's output."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng([17, seed])
        inputs, fn = OP_FAMILIES[name](rng)
        weights = Tensor(rng.normal(size=fn(inputs).shape))
        worst = max(worst, grad_check_many(lambda: (fn(inputs) * weights).sum(), inputs, h))
    return CheckResult(name, worst, len(seeds))


def tiny_model_config(variant: str) -> ModelConfig:
    """8x8 images, 4 px patches, width 8, two blocks."""
    enc = EncoderConfig(image_size=8, patch_size=4, embed_dim=8, num_blocks=2, num_heads=2, mlp_ratio=2)
    dec = DecoderConfig(dim=8, num_blocks=1, num_heads=2, mlp_ratio=2, upsample_stages=1, head_hidden=4)
    return ModelConfig(enc, make_variant(variant, 4), dec)


def directional_check(f: Callable[[], Tensor], tensors: list[Tensor], rng: np.random.Generator,
                      directions: int = 3, h: float = 1e-5) -> float:
    """Compare ``<grad, v>`` with a central difference of ``f`` along random ``v``.

    Checking whole-model gradients coordinate by coordinate is dominated by
    roundoff on coordinates whose true gradient is zero or near it (key biases
    under softmax are exactly zero); projecting onto dense random directions
    keeps every parameter in play while giving a well-conditioned comparison.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    backward(f())
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    base = [t.data.copy() for t in tensors]
    analytic, numeric = [], []
    try:
        for _ in range(directions):
            vs = [rng.normal(size=t.shape) for t in tensors]
            analytic.append(sum(float(np.sum(g * v)) for g, v in zip(grads, vs)))
            for t, b, v in zip(tensors, base, vs):
                t.data = b + h * v
            fp = f().item()
            for t, b, v in zip(tensors, base, vs):
                t.data = b - h * v
            fm = f().item()
            numeric.append((fp - fm) / (2.0 * h))
    finally:
        for t, b in zip(tensors, base):
            t.data = b
            t.grad = None
    return relative_error(np.array(analytic), np.array(numeric))


def check_model_loss(variant: str, seeds=range(3), scale: float = 0.3) -> CheckResult:
    """Loss gradient of a tiny randomised model, per parameter group and for the input image."""
    worst, checks = 0.0, 0
    for seed in seeds:
        rng = np.random.default_rng([29, seed])
        model = SegModel(tiny_model_config(variant), seed=seed)
        for _, p in model.named_parameters():
            p.data = rng.normal(0.0, scale, size=p.shape)
        images = Tensor(rng.uniform(size=(2, 3, 8, 8)))
        target = (rng.uniform(size=(2, 8, 8)) < 0.4).astype(np.float64)
        f = lambda: bce_dice_loss(model(images), target, TrainConfig())  # noqa: E731
        groups = [[p for _, p in model.group_parameters(g)] for g in ("encoder", "adapters", "decoder")]
        for tensors in groups:
            worst = max(worst, directional_check(f, tensors, rng))
        # the loss is nearly flat in pixel space; the largest allowed step keeps
        # the difference quotient clear of roundoff
        worst = max(worst, directional_check(f, [images], rng, h=1e-4))
        checks += len(groups) + 1
    return CheckResult(f"model_loss[{variant}]", worst, checks)


def run_suite() -> tuple[list[CheckResult], float]:
    t0 = time.perf_counter()
    results = [check_op_family(name) for name in OP_FAMILIES]
    results += [check_model_loss(v) for v in MODEL_VARIANTS]
    return results, time.perf_counter() - t0
