"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_many(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error over every coordinate of every tensor in ``inputs``.

    ``f`` is re-evaluated from scratch for each perturbation and must read the
    inputs' ``data`` buffers, which are perturbed in place and restored.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-6, 1e-4]")
    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        backward(f())
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
        for t in inputs:
            t.grad = None
        worst = 0.0
        for t, a in zip(inputs, analytic):
            worst = max(worst, relative_error(a, numerical_grad(f, t, h)))
        return worst
    finally:
        for t, (rg, g) in zip(inputs, saved):
            t.requires_grad, t.grad = rg, g


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Worst relative error between ``backward`` and central differences of ``f`` at ``x``."""
    return grad_check_many(lambda: f(x), [x], h)
