"""Binary checkpoint format.

Little-endian layout::

    b"ATLS"  u32 version
    u64 header length, UTF-8 JSON header (configs, epoch, RNG state, ...)
    u32 record count, then per record:
        u32 name length, name bytes, u32 rank, rank x u64 dims, float64 payload
"""

from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

from ..model import SegModel
from ..serialize import model_config_from_dict, model_config_to_dict

MAGIC = b"ATLS"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def write_checkpoint(path, header: dict, tensors: Mapping[str, np.ndarray]) -> None:
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(text)), text,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"{self.path}: file ends after {len(self.buf)} bytes")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic {buf[:4]!r})")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header: {exc}") from None
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8", "replace")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q")
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return header, tensors


def restore_parameters(model: SegModel, tensors: Mapping[str, np.ndarray], prefix: str = "param/") -> None:
    for name, p in model.named_parameters():
        key = prefix + name
        if key not in tensors:
            raise ShapeMismatchError(f"checkpoint has no parameter {name!r}")
        arr = tensors[key]
        if arr.shape != p.shape:
            raise ShapeMismatchError(f"parameter {name!r}: checkpoint shape {arr.shape}, model shape {p.shape}")
        p.data = arr.copy()
    extra = {k for k in tensors if k.startswith(prefix)} - {prefix + n for n, _ in model.named_parameters()}
    if extra:
        raise ShapeMismatchError(f"checkpoint parameters absent from model: {sorted(extra)[:3]}")


def save_checkpoint(path, model: SegModel, state=None, extra: dict | None = None) -> None:
    """Write parameters, trainable flags, and (if given) a ``TrainState``."""
    header = {"model": model_config_to_dict(model.config),
              "trainable": [n for n, p in model.named_parameters() if p.requires_grad],
              "extra": extra or {}}
    tensors = {f"param/{n}": p.data for n, p in model.named_parameters()}
    if state is not None:
        header.update(state.header())
        for n in state.optimizer.m:
            tensors[f"adam_m/{n}"] = state.optimizer.m[n]
            tensors[f"adam_v/{n}"] = state.optimizer.v[n]
    write_checkpoint(path, header, tensors)


def load_checkpoint(path, model: SegModel | None = None):
    """Return ``(model, state, header)``.

    With ``model`` given, parameters are loaded into it (its config must agree);
    otherwise a model is built from the stored config.
    """
    from .trainer import TrainState

    header, tensors = read_checkpoint(path)
    if model is None:
        model = SegModel(model_config_from_dict(header["model"]))
    restore_parameters(model, tensors)
    trainable = set(header.get("trainable", []))
    for n, p in model.named_parameters():
        p.requires_grad = n in trainable
    state = TrainState.from_checkpoint(model, header, tensors) if "train" in header else None
    return model, state, header
