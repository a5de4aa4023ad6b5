"""Full segmentation model: frozen encoder, per-block adapters, trainable decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .adapter import (AtlConfig, AtlLayer, Placement, count_adapter_params, default_bottleneck, make_variant,
                       wrap_inside, wrap_outside)
from .decoder import DecoderConfig, MaskDecoder, decode, decoder_param_count
from .encoder import EncoderConfig, ImageEncoder, encode, encoder_param_count
from .nn import SHAPE_ONLY, Module
from .tensor import Tensor

GROUPS = ("encoder", "adapters", "decoder")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: Optional[AtlConfig] = None
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    # seeds the frozen encoder weights, standing in for a pretrained checkpoint
    encoder_seed: int = 0


class SegModel(Module):
    """Encoder + optional adapters + decoder.

    ``seed`` initialises the adapters and decoder only; the encoder comes from
    ``config.encoder_seed`` so every variant and every training seed starts
    from the same frozen backbone.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, shape_only: bool = False):
        enc = config.encoder
        self.config = config
        self.encoder = ImageEncoder(enc, config.encoder_seed, shape_only=shape_only)
        rng = SHAPE_ONLY if shape_only else np.random.default_rng([seed, 1])
        if config.adapter is not None:
            self.adapters = [AtlLayer(config.adapter, enc.embed_dim, rng) for _ in range(enc.num_blocks)]
        else:
            self.adapters = []
        self.decoder = MaskDecoder(config.decoder, enc.embed_dim, enc.image_size,
                                   seed=int(np.random.default_rng([seed, 2]).integers(2**31)),
                                   shape_only=shape_only)

    def group_parameters(self, group: str) -> Iterator[tuple[str, Tensor]]:
        if group == "encoder":
            yield from self.encoder.named_parameters("encoder.")
        elif group == "adapters":
            for i, layer in enumerate(self.adapters):
                yield from layer.named_parameters(f"adapters.{i}.")
        elif group == "decoder":
            yield from self.decoder.named_parameters("decoder.")
        else:
            raise KeyError(group)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for g in GROUPS:
            for name, p in self.group_parameters(g):
                yield prefix + name, p

    def encode(self, images: Tensor) -> Tensor:
        """Encoder output with adapters applied per the configured placement."""
        enc = self.encoder
        adapter = self.config.adapter
        if adapter is None:
            return encode(enc, images)
        x = enc.patch(images)
        if adapter.placement is Placement.OUTSIDE:
            return wrap_outside(enc.blocks, self.adapters)(x)
        for blk, layer in zip(enc.blocks, self.adapters):
            x = wrap_inside(blk, layer)(x)
        return x

    def __call__(self, images) -> Tensor:
        if not isinstance(images, Tensor):
            images = Tensor(images)
        return decode(self.decoder, self.encode(images))


def closed_form_counts(config: ModelConfig) -> dict[str, int]:
    enc = config.encoder
    adapters = 0
    if config.adapter is not None:
        adapters = count_adapter_params(config.adapter, enc.embed_dim, enc.num_blocks)
    return {
        "encoder": encoder_param_count(enc),
        "adapters": adapters,
        "decoder": decoder_param_count(config.decoder, enc.embed_dim),
    }


def _preset(encoder: EncoderConfig, decoder: DecoderConfig, variant: Optional[str]) -> ModelConfig:
    adapter = make_variant(variant, default_bottleneck(encoder.embed_dim)) if variant else None
    return ModelConfig(encoder, adapter, decoder)


def toy_config(variant: Optional[str] = "TransLandSeg") -> ModelConfig:
    """64 px images, width 64, 4 blocks; adapters use ``d = M // 16``."""
    return _preset(EncoderConfig.toy(), DecoderConfig.toy(), variant)


def vitl_shape_config(variant: Optional[str] = "TransLandSeg") -> ModelConfig:
    """ViT-L geometry for parameter accounting only."""
    return _preset(EncoderConfig.vitl_shape(), DecoderConfig.vitl_shape(), variant)
