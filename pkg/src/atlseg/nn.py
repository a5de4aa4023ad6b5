"""Parameter containers shared by the encoder, adapters and decoder."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, layer_norm, linear


class ShapeOnly:
    """Stand-in generator: every "sample" is a zero-stride view, so a model
    of any size can be built to count parameters without allocating them."""

    def normal(self, loc=0.0, scale=1.0, size=()):
        return np.broadcast_to(np.float64(0.0), size)


SHAPE_ONLY = ShapeOnly()


def init_normal(rng, shape, std: float) -> Tensor:
    """``N(0, std^2)`` parameter; ``rng=None`` gives zeros."""
    if rng is None:
        return Tensor(np.zeros(shape))
    return Tensor(rng.normal(0.0, std, size=shape))


class Module:
    """Anything holding :class:`Tensor` parameters, possibly nested.

    Parameters are discovered from attributes in assignment order: tensors,
    sub-modules, and lists of sub-modules. Names are dotted paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """Affine map over the last axis; ``weight`` is ``[in, out]``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None, std: float | None = None):
        self.weight = init_normal(rng, (n_in, n_out), (1.0 / np.sqrt(n_in)) if std is None else std)
        self.bias = Tensor(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(dim))
        self.beta = Tensor(np.zeros(dim))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self._eps)
