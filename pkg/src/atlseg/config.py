"""TOML run configuration: presets, section parsing, validation and echo.

A run file has top-level ``preset``, ``seed`` and ``output_dir`` keys and the
sections ``[encoder]``, ``[adapter]``, ``[decoder]``, ``[train]``, ``[data]``
and ``[ablate]``. Every key is optional; omitted keys take the preset's value.
The run ``seed`` drives model initialisation and data order, so ``[train]``
has no seed of its own; ``[data] seed`` fixes the synthetic dataset.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import tomli_w

from .adapter import VARIANT_NAMES, AtlConfig, UnknownVariantError, default_bottleneck, make_variant
from .data import DatasetSpec
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import ModelConfig
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PRESETS = ("toy", "vitl-shape")
NO_ADAPTER = "none"


class ConfigError(ValueError):
    """Invalid run configuration; the CLI maps it to exit code 2."""


@dataclass(frozen=True)
class AdapterSection:
    variant: str = "TransLandSeg"
    bottleneck_dim: int = 0  # 0 means embed_dim // 16


@dataclass(frozen=True)
class AblateSection:
    variants: tuple = VARIANT_NAMES
    seeds: tuple = (7,)


@dataclass(frozen=True)
class RunConfig:
    preset: str = "toy"
    seed: int = 7
    output_dir: str = "runs/atlseg"
    encoder: EncoderConfig = field(default_factory=EncoderConfig.toy)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    decoder: DecoderConfig = field(default_factory=DecoderConfig.toy)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    ablate: AblateSection = field(default_factory=AblateSection)

    @property
    def bottleneck_dim(self) -> int:
        return self.adapter.bottleneck_dim or default_bottleneck(self.encoder.embed_dim)

    def adapter_config(self, variant: Optional[str] = None) -> Optional[AtlConfig]:
        name = variant or self.adapter.variant
        return None if name == NO_ADAPTER else make_variant(name, self.bottleneck_dim)

    def model_config(self, variant: Optional[str] = None) -> ModelConfig:
        return ModelConfig(self.encoder, self.adapter_config(variant), self.decoder)

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"preset": self.preset, "seed": self.seed, "output_dir": self.output_dir}
        for name in _SECTIONS:
            values = dataclasses.asdict(getattr(self, name))
            if name == "train":
                del values["seed"]
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
        out["adapter"]["bottleneck_dim"] = self.bottleneck_dim
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


_SECTIONS = ("encoder", "adapter", "decoder", "train", "data", "ablate")
_TOP_LEVEL = {"preset": str, "seed": int, "output_dir": str}


def preset_config(preset: str) -> RunConfig:
    if preset == "toy":
        return RunConfig()
    if preset == "vitl-shape":
        enc = EncoderConfig.vitl_shape()
        return RunConfig(preset=preset, encoder=enc, decoder=DecoderConfig.vitl_shape(),
                         data=DatasetSpec(image_size=enc.image_size))
    raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")


def _check_type(key: str, value, expected) -> None:
    if expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is tuple:
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"{key}: expected {expected.__name__ if expected is not tuple else 'array'}, "
                          f"got {type(value).__name__} {value!r}")


def _apply_section(name: str, base, values) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"{name}: expected a [{name}] table")
    allowed = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    if name == "train":
        allowed.pop("seed")
    updates = {}
    for key, value in values.items():
        path = f"{name}.{key}"
        if key not in allowed:
            raise ConfigError(f"unknown key {path!r}; valid keys: {', '.join(sorted(allowed))}")
        _check_type(path, value, allowed[key])
        updates[key] = tuple(value) if allowed[key] is tuple else value
    try:
        return dataclasses.replace(base, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def config_from_dict(raw: dict, preset: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    for key in raw:
        if key not in _TOP_LEVEL and key not in _SECTIONS:
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(sorted([*_TOP_LEVEL, *_SECTIONS]))}")
    for key, kind in _TOP_LEVEL.items():
        if key in raw:
            _check_type(key, raw[key], kind)
    run = preset_config(preset or raw.get("preset", "toy"))
    top = {k: raw[k] for k in ("seed", "output_dir") if k in raw}
    if seed is not None:
        top["seed"] = seed
    sections = {name: _apply_section(name, getattr(run, name), raw.get(name, {}))
                for name in _SECTIONS if name != "data"}
    # the dataset resolution follows the encoder unless set explicitly
    data_base = dataclasses.replace(run.data, image_size=sections["encoder"].image_size)
    sections["data"] = _apply_section("data", data_base, raw.get("data", {}))
    if not sections["adapter"].bottleneck_dim:
        sections["adapter"] = dataclasses.replace(
            sections["adapter"], bottleneck_dim=default_bottleneck(sections["encoder"].embed_dim))
    run = dataclasses.replace(run, **top, **sections)
    _validate(run)
    return run


def _validate(run: RunConfig) -> None:
    if run.data.image_size != run.encoder.image_size:
        raise ConfigError(f"data.image_size {run.data.image_size} differs from encoder.image_size "
                          f"{run.encoder.image_size}")
    names = [run.adapter.variant, *run.ablate.variants]
    for name in names:
        if name != NO_ADAPTER and name not in VARIANT_NAMES:
            raise ConfigError(str(UnknownVariantError(name)))
    if not run.ablate.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in run.ablate.seeds):
        raise ConfigError("ablate.seeds must be a non-empty array of integers")
    if run.adapter.bottleneck_dim < 0:
        raise ConfigError("adapter.bottleneck_dim must be >= 0")
    try:
        run.model_config()
        if run.adapter_config() is not None:
            run.adapter_config().check_width(run.encoder.embed_dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path=None, preset: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Parse ``path`` (or start from the preset alone) and apply CLI overrides."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        return config_from_dict(raw, preset, seed)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}" if path is not None else str(exc)) from None
