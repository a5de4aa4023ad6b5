"""Plain-dict forms of the model configuration, for checkpoints and config echoes."""

from __future__ import annotations

from dataclasses import asdict

from .adapter import AtlConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import ModelConfig


def adapter_to_dict(cfg: AtlConfig | None) -> dict | None:
    if cfg is None:
        return None
    return {
        "bottleneck_dim": cfg.bottleneck_dim,
        "midlays": [k.value for k in cfg.midlays],
        "residual": cfg.residual,
        "placement": cfg.placement.value,
    }


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "encoder": asdict(cfg.encoder),
        "adapter": adapter_to_dict(cfg.adapter),
        "decoder": asdict(cfg.decoder),
        "encoder_seed": cfg.encoder_seed,
    }


def model_config_from_dict(d: dict) -> ModelConfig:
    a = d.get("adapter")
    adapter = None if a is None else AtlConfig(a["bottleneck_dim"], tuple(a["midlays"]), a["residual"], a["placement"])
    return ModelConfig(EncoderConfig(**d["encoder"]), adapter, DecoderConfig(**d["decoder"]), d.get("encoder_seed", 0))
