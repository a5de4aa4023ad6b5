"""Prompt-free mask decoder.

Tokens are projected to the decoder width, refined by self-attention blocks,
upsampled by stride-2 transposed convolutions (each halving channels), mapped
to one logit per pixel by a small MLP, and finally resized bilinearly to the
image resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import TransformerBlock, block_forward, block_param_count
from .nn import SHAPE_ONLY, Linear, Module, init_normal
from .tensor import ShapeError, Tensor, conv_transpose2d, gelu, resize_bilinear, sigmoid


@dataclass(frozen=True)
class DecoderConfig:
    dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    upsample_stages: int = 2
    head_hidden: int = 32

    def __post_init__(self):
        if self.upsample_stages < 1:
            raise ValueError("upsample_stages must be >= 1")
        if self.dim % (2 ** self.upsample_stages):
            raise ValueError(f"dim {self.dim} cannot be halved {self.upsample_stages} times")
        if self.num_heads <= 0 or self.dim % self.num_heads:
            raise ValueError(f"dim {self.dim} not divisible by num_heads {self.num_heads}")
        if self.num_blocks < 0 or self.head_hidden < 1:
            raise ValueError("num_blocks must be >= 0 and head_hidden >= 1")

    @classmethod
    def toy(cls) -> "DecoderConfig":
        return cls()

    @classmethod
    def vitl_shape(cls) -> "DecoderConfig":
        return cls(dim=128, num_blocks=2, num_heads=4, mlp_ratio=4, upsample_stages=2, head_hidden=32)


class Upsample(Module):
    def __init__(self, c_in: int, rng):
        self.weight = init_normal(rng, (c_in, c_in // 2, 2, 2), 1.0 / np.sqrt(c_in))
        self.bias = Tensor(np.zeros(c_in // 2))

    def __call__(self, x: Tensor) -> Tensor:
        return gelu(conv_transpose2d(x, self.weight, self.bias, stride=2))


class MaskDecoder(Module):
    def __init__(self, config: DecoderConfig, embed_dim: int, image_size: int, seed: int = 0,
                 shape_only: bool = False):
        rng = SHAPE_ONLY if shape_only else np.random.default_rng(seed)
        c = config.dim
        self.config = config
        self.proj = Linear(embed_dim, c, rng)
        self.blocks = [TransformerBlock(c, config.num_heads, config.mlp_ratio, rng)
                       for _ in range(config.num_blocks)]
        self.upsample = [Upsample(c // 2 ** i, rng) for i in range(config.upsample_stages)]
        c_out = c // 2 ** config.upsample_stages
        self.head1 = Linear(c_out, config.head_hidden, rng)
        self.head2 = Linear(config.head_hidden, 1, rng)
        self._embed_dim = embed_dim
        self._image_size = image_size

    def __call__(self, tokens: Tensor) -> Tensor:
        return decode(self, tokens)


def decode(decoder: MaskDecoder, tokens: Tensor) -> Tensor:
    """Token grid ``[B,h,w,M]`` -> logit map ``[B,1,H,W]`` at image resolution."""
    if tokens.ndim != 4 or tokens.shape[-1] != decoder._embed_dim:
        raise ShapeError(f"decoder expects [B,h,w,{decoder._embed_dim}] tokens, got {tokens.shape}")
    x = decoder.proj(tokens)
    for blk in decoder.blocks:
        x = block_forward(blk, x)
    x = x.transpose(0, 3, 1, 2)
    for up in decoder.upsample:
        x = up(x)
    x = decoder.head2(gelu(decoder.head1(x.transpose(0, 2, 3, 1))))  # [B,H',W',1]
    x = x.transpose(0, 3, 1, 2)
    size = decoder._image_size
    if x.shape[-2:] != (size, size):
        x = resize_bilinear(x, (size, size))
    return x


def predict_mask(logits, threshold: float = 0.5) -> np.ndarray:
    """Binary ``[B,H,W]`` mask, 1 where ``sigmoid(logit) >= threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    prob = sigmoid(Tensor(data)).data
    if prob.ndim == 4:
        prob = prob[:, 0]
    return (prob >= threshold).astype(np.uint8)


def decoder_param_count(config: DecoderConfig, embed_dim: int) -> int:
    c = config.dim
    total = embed_dim * c + c + config.num_blocks * block_param_count(c, config.mlp_ratio)
    for i in range(config.upsample_stages):
        ci = c // 2 ** i
        total += ci * (ci // 2) * 4 + ci // 2
    c_out = c // 2 ** config.upsample_stages
    total += c_out * config.head_hidden + config.head_hidden + config.head_hidden + 1
    return total
