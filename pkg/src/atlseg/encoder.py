"""ViT image encoder: strided-conv patch embedding plus pre-norm transformer blocks.

Token grids are tensors shaped ``[batch, h_tokens, w_tokens, M]`` throughout;
attention flattens the grid only internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .nn import SHAPE_ONLY, LayerNorm, Linear, Module, init_normal
from .tensor import Tensor, conv2d, gelu, matmul, softmax


class InputError(ValueError):
    """An image does not match the encoder's expected geometry."""


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    num_blocks: int = 4
    num_heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.num_heads <= 0 or self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @classmethod
    def toy(cls) -> "EncoderConfig":
        return cls()

    @classmethod
    def vitl_shape(cls) -> "EncoderConfig":
        """ViT-L/16 geometry at 1024 px. For parameter accounting only."""
        return cls(image_size=1024, patch_size=16, embed_dim=1024, num_blocks=24, num_heads=16, mlp_ratio=4)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self._heads = num_heads

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, m = x.shape
        n, nh = h * w, self._heads
        hd = m // nh
        flat = x.reshape(b, n, m)

        def heads(t: Tensor) -> Tensor:
            return t.reshape(b, n, nh, hd).transpose(0, 2, 1, 3)

        q, k, v = heads(self.q(flat)), heads(self.k(flat)), heads(self.v(flat))
        attn = softmax(matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd)), axis=-1)
        out = matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, h, w, m)
        return self.proj(out)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock(Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: int, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return block_forward(self, x)


def block_forward(block: TransformerBlock, x: Tensor,
                  attn_hook: Optional[Callable[[Tensor], Tensor]] = None) -> Tensor:
    """Pre-norm block. ``attn_hook`` rewrites the attention output before the
    first residual add; this is where an inside-block adapter attaches."""
    x_a = block.attn(block.norm1(x))
    if attn_hook is not None:
        x_a = attn_hook(x_a)
    x_t = x_a + x
    return block.mlp(block.norm2(x_t)) + x_t


class PatchEmbed(Module):
    def __init__(self, config: EncoderConfig, rng):
        p, m, g = config.patch_size, config.embed_dim, config.grid
        self.weight = init_normal(rng, (m, 3, p, p), 1.0 / np.sqrt(3 * p * p))
        self.bias = Tensor(np.zeros(m))
        self.pos = init_normal(rng, (g, g, m), 0.02)
        self._config = config

    def __call__(self, image: Tensor) -> Tensor:
        cfg = self._config
        if image.ndim != 4 or image.shape[1] != 3:
            raise InputError(f"expected [B,3,H,W] RGB image, got shape {image.shape}")
        if image.shape[2] != cfg.image_size or image.shape[3] != cfg.image_size:
            raise InputError(f"expected {cfg.image_size}x{cfg.image_size} image, got "
                             f"{image.shape[2]}x{image.shape[3]}")
        x = conv2d(image, self.weight, self.bias, stride=cfg.patch_size)
        return x.transpose(0, 2, 3, 1) + self.pos


class ImageEncoder(Module):
    def __init__(self, config: EncoderConfig, seed: int = 0, shape_only: bool = False):
        rng = SHAPE_ONLY if shape_only else np.random.default_rng(seed)
        self.config = config
        self.patch = PatchEmbed(config, rng)
        self.blocks = [TransformerBlock(config.embed_dim, config.num_heads, config.mlp_ratio, rng)
                       for _ in range(config.num_blocks)]

    def __call__(self, image: Tensor) -> Tensor:
        return encode(self, image)


def patch_embed(encoder: ImageEncoder, image: Tensor) -> Tensor:
    return encoder.patch(image)


def encode(encoder: ImageEncoder, image: Tensor) -> Tensor:
    x = encoder.patch(image)
    for blk in encoder.blocks:
        x = block_forward(blk, x)
    return x


def block_param_count(dim: int, mlp_ratio: int) -> int:
    """Two LayerNorms, four square projections and the MLP, all with biases."""
    hidden = dim * mlp_ratio
    return 2 * 2 * dim + 4 * (dim * dim + dim) + (dim * hidden + hidden) + (hidden * dim + dim)


def encoder_param_count(config: EncoderConfig) -> int:
    p, m, g = config.patch_size, config.embed_dim, config.grid
    embed = 3 * p * p * m + m + g * g * m
    return embed + config.num_blocks * block_param_count(m, config.mlp_ratio)
