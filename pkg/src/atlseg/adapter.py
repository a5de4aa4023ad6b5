"""Bottleneck adapters for a frozen ViT encoder.

An adapter projects tokens ``M -> d``, runs a stack of mid layers at width
``d``, and projects back ``d -> M``. Two mid layer kinds exist: a fully
connected layer followed by GELU (``M``), and a 3x3 convolution over the token
grid followed by channel LayerNorm and GELU (``C``). The adapter output is
either added to its input (residual fusion) or used on its own, and is
deployed either between blocks or between a block's attention and MLP.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .encoder import TransformerBlock, block_forward
from .nn import LayerNorm, Linear, Module, init_normal
from .tensor import ShapeError, Tensor, conv2d, gelu


class MidLayKind(str, enum.Enum):
    M = "M"  # fully connected + GELU
    C = "C"  # 3x3 conv + LayerNorm + GELU


class Placement(str, enum.Enum):
    OUTSIDE = "outside"
    INSIDE = "inside"


@dataclass(frozen=True)
class AtlConfig:
    bottleneck_dim: int
    midlays: tuple[MidLayKind, ...]
    residual: bool = True
    placement: Placement = Placement.OUTSIDE

    def __post_init__(self):
        object.__setattr__(self, "midlays", tuple(MidLayKind(k) for k in self.midlays))
        object.__setattr__(self, "placement", Placement(self.placement))
        if self.bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be >= 1")
        if not 1 <= len(self.midlays) <= 5:
            raise ValueError(f"need 1..5 mid layers, got {len(self.midlays)}")

    def check_width(self, embed_dim: int) -> None:
        if self.bottleneck_dim >= embed_dim:
            raise ValueError(f"bottleneck_dim {self.bottleneck_dim} must be below embed_dim {embed_dim}")

    @property
    def midlay_label(self) -> str:
        """Compact stack description, e.g. ``Mx2+Cx3``."""
        parts: list[str] = []
        for kind in self.midlays:
            if parts and parts[-1][0] == kind.value:
                parts[-1] = f"{kind.value}x{int(parts[-1][2:]) + 1}"
            else:
                parts.append(f"{kind.value}x1")
        return "+".join(parts)


# Ablation grid order; the reference configuration is listed last.
_VARIANT_ROWS: dict[str, tuple[str, bool, Placement]] = {
    "TransLandSeg-1": ("CCC", True, Placement.OUTSIDE),
    "TransLandSeg-2": ("CC", True, Placement.OUTSIDE),
    "TransLandSeg-3": ("CC", False, Placement.OUTSIDE),
    "TransLandSeg-4": ("MM", True, Placement.OUTSIDE),
    "TransLandSeg-5": ("MMCCC", True, Placement.OUTSIDE),
    "TransLandSeg-6": ("MMCCC", True, Placement.INSIDE),
    "TransLandSeg-7": ("M", False, Placement.OUTSIDE),
    "TransLandSeg-8": ("M", True, Placement.INSIDE),
    "TransLandSeg": ("M", True, Placement.OUTSIDE),
}
VARIANT_NAMES: tuple[str, ...] = tuple(_VARIANT_ROWS)


class UnknownVariantError(KeyError):
    def __str__(self) -> str:
        return f"unknown variant {self.args[0]!r}; valid names: {', '.join(VARIANT_NAMES)}"


def make_variant(name: str, bottleneck_dim: int = 4) -> AtlConfig:
    try:
        mids, residual, placement = _VARIANT_ROWS[name]
    except KeyError:
        raise UnknownVariantError(name) from None
    return AtlConfig(bottleneck_dim, tuple(MidLayKind(c) for c in mids), residual, placement)


def default_bottleneck(embed_dim: int) -> int:
    return max(1, embed_dim // 16)


class MidLayM(Module):
    def __init__(self, d: int, rng):
        self.fc = Linear(d, d, rng, std=1.0 / np.sqrt(d))

    def __call__(self, x: Tensor) -> Tensor:
        return gelu(self.fc(x))


class MidLayC(Module):
    def __init__(self, d: int, rng):
        self.weight = init_normal(rng, (d, d, 3, 3), 1.0 / np.sqrt(d))
        self.bias = Tensor(np.zeros(d))
        self.norm = LayerNorm(d)

    def __call__(self, x: Tensor) -> Tensor:
        # tokens [B,h,w,d] -> channels-first grid for the conv, then back
        y = conv2d(x.transpose(0, 3, 1, 2), self.weight, self.bias, stride=1, padding=1)
        return gelu(self.norm(y.transpose(0, 2, 3, 1)))


class AtlLayer(Module):
    def __init__(self, config: AtlConfig, embed_dim: int, rng):
        config.check_width(embed_dim)
        d = config.bottleneck_dim
        self.down = Linear(embed_dim, d, rng, std=1.0 / np.sqrt(embed_dim))
        self.mid = [MidLayM(d, rng) if k is MidLayKind.M else MidLayC(d, rng) for k in config.midlays]
        # zero up-projection makes residual fusion an exact identity at init; without the
        # residual a zero map would cut every path from image to decoder, so sample it
        self.up = Linear(d, embed_dim, None if config.residual else rng, std=1.0 / np.sqrt(d))
        self._config = config
        self._dim = embed_dim

    @property
    def config(self) -> AtlConfig:
        return self._config

    @property
    def residual(self) -> bool:
        return self._config.residual

    def __call__(self, x: Tensor) -> Tensor:
        return fuse_residual(self, x)


def atl_forward(layer: AtlLayer, phi: Tensor) -> Tensor:
    """Adapter branch alone: down-projection, mid stack, up-projection."""
    if phi.shape[-1] != layer._dim:
        raise ShapeError(f"adapter expects {layer._dim} channels, got tokens {phi.shape}")
    h = layer.down(phi)
    for mid in layer.mid:
        h = mid(h)
    return layer.up(h)


def fuse_residual(layer: AtlLayer, x: Tensor) -> Tensor:
    theta = atl_forward(layer, x)
    return theta + x if layer.residual else theta


def wrap_outside(blocks: Sequence[TransformerBlock], layers: Sequence[AtlLayer]) -> Callable[[Tensor], Tensor]:
    """Adapter before every block: ``Phi_i = block_i(adapter_i(Phi_{i-1}))``."""
    if len(blocks) != len(layers):
        raise ValueError(f"{len(layers)} adapters for {len(blocks)} blocks")

    def forward(x: Tensor) -> Tensor:
        for blk, layer in zip(blocks, layers):
            x = block_forward(blk, fuse_residual(layer, x))
        return x

    return forward


def wrap_inside(block: TransformerBlock, layer: AtlLayer) -> Callable[[Tensor], Tensor]:
    """Adapter applied to the attention output before the block's first residual add."""
    return lambda x: block_forward(block, x, attn_hook=lambda x_a: fuse_residual(layer, x_a))


def count_adapter_params(config: AtlConfig, embed_dim: int, num_blocks: int) -> int:
    m, d = embed_dim, config.bottleneck_dim
    per = (m * d + d) + (d * m + m)
    for kind in config.midlays:
        per += d * d + d if kind is MidLayKind.M else 9 * d * d + d + 2 * d
    return per * num_blocks
